use nablafrac::cli;

fn main() {
    let mut args = std::env::args().skip(1);
    let Some(path) = args.next() else {
        eprintln!("usage: nablafrac <runspec>");
        std::process::exit(1);
    };
    if args.next().is_some() {
        eprintln!("usage: nablafrac <runspec>");
        std::process::exit(1);
    }
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("IoError: cannot read {path}: {e}");
            std::process::exit(1);
        }
    };
    let spec = match cli::parse_runspec(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(cli::exit_code(&e));
        }
    };
    match cli::run(&spec) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(cli::exit_code(&e));
        }
    }
}

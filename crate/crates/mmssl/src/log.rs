use std::io::IsTerminal;

fn colored() -> bool {
    std::env::var_os("NO_COLOR").is_none() && std::io::stderr().is_terminal()
}

pub fn info(msg: &str) {
    if colored() {
        eprintln!("\x1b[32m[mmssl]\x1b[0m {msg}");
    } else {
        eprintln!("[mmssl] {msg}");
    }
}

pub fn error(msg: &str) {
    if colored() {
        eprintln!("\x1b[31merror:\x1b[0m {msg}");
    } else {
        eprintln!("error: {msg}");
    }
}

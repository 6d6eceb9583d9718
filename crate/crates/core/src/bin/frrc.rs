fn main() {
    if let Err(e) = frrc_core::cli::run(std::env::args_os()) {
        let msg = e.message().trim_end();
        match msg.strip_prefix("error: ") {
            Some(m) => eprintln!("error: {m}"),
            None => eprintln!("error: {msg}"),
        }
        std::process::exit(e.exit_code());
    }
}

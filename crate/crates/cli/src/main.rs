fn main() {
    if let Err(e) = glbulk_cli::run_from(std::env::args_os()) {
        eprintln!("glbulk: {e}");
        std::process::exit(e.exit_code());
    }
}

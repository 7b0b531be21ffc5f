fn main() {
    let code = match graphsmc::cli::run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("error-code: {}", e.code_tag());
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn main() {
    umbilic::cli::init_logging();
    let code = umbilic::cli::dispatch(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("TILEFORGE_LOG")).init();
    let code = tileforge::cli::main_with_args(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NOLAN_LOG", "warn"))
        .format_timestamp(None)
        .init();
    std::process::exit(nolan_cli::main_with(std::env::args_os()));
}

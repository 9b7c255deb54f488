use uqengine::cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = cli::main_with(std::env::args_os());
    std::process::exit(code as i32);
}

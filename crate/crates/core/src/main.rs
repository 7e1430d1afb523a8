fn main() -> std::process::ExitCode {
    submap_slam::cli::main_with(std::env::args_os())
}

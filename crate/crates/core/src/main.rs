fn main() -> std::process::ExitCode {
    vislab::cli::main()
}

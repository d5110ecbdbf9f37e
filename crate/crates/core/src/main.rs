fn main() -> std::process::ExitCode {
    cowqkd::cli::main()
}

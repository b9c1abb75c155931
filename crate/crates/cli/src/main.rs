fn main() -> std::process::ExitCode {
    pegkit_cli::cli::main()
}

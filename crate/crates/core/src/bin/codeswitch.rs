fn main() -> std::process::ExitCode {
    codeswitch::cli::main()
}

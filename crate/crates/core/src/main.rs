fn main() -> std::process::ExitCode {
    tsk_core::cli::main()
}

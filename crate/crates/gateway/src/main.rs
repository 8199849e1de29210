fn main() -> std::process::ExitCode {
    prefalign_gateway::cli::main()
}

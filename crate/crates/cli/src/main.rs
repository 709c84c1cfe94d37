fn main() {
    let code = mfpt_cli::main_with(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}

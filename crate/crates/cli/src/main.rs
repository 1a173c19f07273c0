fn main() {
    let args: Vec<String> = std::env::args().collect();
    let code = snlp_cli::parse_and_dispatch(&args, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}

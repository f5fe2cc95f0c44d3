fn main() {
    let outcome = liadsim_cli::run(std::env::args_os());
    if !outcome.summary.is_empty() {
        println!("{}", outcome.summary);
    }
    std::process::exit(outcome.exit_code);
}

fn main() {
    let code = cg2a_harness::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}

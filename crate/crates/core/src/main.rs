fn main() {
    std::process::exit(poisson_coalgebra::cli::run(std::env::args_os()));
}

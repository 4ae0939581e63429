//! Scripted runner for the runner protocol. See `utlab::mock`.

fn main() {
    std::process::exit(utlab::mock::serve_stdio());
}

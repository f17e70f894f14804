//! Runs the structural part of the invariant suite and prints the table.

use deftan::selftest::{run, table, Options};

fn main() {
    let filter = std::env::args().nth(1).unwrap_or_else(|| "structure".into());
    print!("{}", table(&run(Options::default(), Some(&filter))));
}

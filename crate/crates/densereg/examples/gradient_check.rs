//! Verifies every backward pass against central finite differences and
//! prints the per-op report.

use densereg::net::check_all;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let reports = check_all(seed).unwrap();
    let mut ok = true;
    for r in &reports {
        println!("{r}");
        ok &= r.pass();
    }
    if !ok {
        std::process::exit(3);
    }
    println!("all {} checks passed", reports.len());
}

// The cubic sparsity schedule: large steps early, small steps late.

use std::error::Error;

use cgp::sparsify::{schedule_rate, PruneSchedule};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let s = PruneSchedule {
        p_i: 0.0,
        p_f: 0.9,
        t0: 10,
        dt: 10,
        n: 8,
    };
    s.validate()?;
    let mut prev = s.p_i;
    println!("epoch sparsity  step");
    for t in s.events() {
        let p = schedule_rate(&s, t)?;
        println!("{t:>5} {p:>8.4} {:>+.4}", p - prev);
        prev = p;
    }
    assert_eq!(schedule_rate(&s, s.end())?, 0.9);
    assert!(schedule_rate(&s, 15).is_err());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}

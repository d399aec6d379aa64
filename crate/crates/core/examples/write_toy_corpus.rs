//! Write the synthetic intent corpus as TSV: `write_toy_corpus <path> [per_intent] [intents] [seed]`.

use std::io::Write;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let Some(path) = args.get(1) else {
        eprintln!("usage: write_toy_corpus <path> [per_intent] [intents] [seed]");
        std::process::exit(1);
    };
    let num = |i: usize, d: u64| args.get(i).map_or(d, |s| s.parse().expect("integer argument"));
    let data = dptext_core::toy::intent_corpus(num(2, 50) as usize, num(3, 4) as usize, num(4, 0));
    let mut f = std::fs::File::create(path).expect("create output");
    for u in &data {
        writeln!(f, "{}\t{}", u.text(), u.label).expect("write");
    }
}

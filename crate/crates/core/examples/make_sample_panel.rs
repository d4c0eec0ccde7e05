//! Writes the bundled synthetic price panel.
//!
//! Twelve assets driven by one market factor plus idiosyncratic noise,
//! 1008 business days, log-normal daily steps. Deterministic for a seed.
//!
//! ```text
//! cargo run -p wctsv-core --example make_sample_panel -- data/sample_prices.csv [seed]
//! ```

use std::io::Write;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const TICKERS: [&str; 12] =
    ["ALPH", "BRVO", "CHRL", "DLTA", "ECHO", "FXTR", "GOLF", "HOTL", "INDA", "JULT", "KILO", "LIMA"];
const ROWS: usize = 1008;

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "data/sample_prices.csv".into());
    let seed: u64 = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(2024);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let n = TICKERS.len();
    let beta: Vec<f64> = (0..n).map(|i| 0.6 + 0.08 * i as f64).collect();
    let idio: Vec<f64> = (0..n).map(|i| 0.008 + 0.0012 * ((i * 7) % n) as f64).collect();
    let drift: Vec<f64> = (0..n).map(|i| 0.0001 + 0.00005 * ((i * 5) % n) as f64).collect();
    let mut price: Vec<f64> = (0..n).map(|i| 20.0 + 15.0 * i as f64).collect();

    let mut date = NaiveDate::from_ymd_opt(2016, 1, 4).unwrap();
    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(f, "date,{}", TICKERS.join(","))?;
    for row in 0..ROWS {
        if row > 0 {
            let market = 0.009 * z.sample(&mut rng);
            for i in 0..n {
                let step = drift[i] + beta[i] * market + idio[i] * z.sample(&mut rng);
                price[i] *= step.exp();
            }
            date = next_business_day(date);
        }
        let cells: Vec<String> = price.iter().map(|p| format!("{p:.4}")).collect();
        writeln!(f, "{},{}", date, cells.join(","))?;
    }
    f.flush()?;
    eprintln!("wrote {ROWS} rows for {n} tickers to {out}");
    Ok(())
}

fn next_business_day(d: NaiveDate) -> NaiveDate {
    let mut next = d + Days::new(1);
    while matches!(next.weekday(), Weekday::Sat | Weekday::Sun) {
        next = next + Days::new(1);
    }
    next
}

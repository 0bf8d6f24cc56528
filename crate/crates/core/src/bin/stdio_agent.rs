//! Reference external agent speaking the newline-delimited JSON protocol.
//!
//! `stdio-agent --policy uniform --seed 3` answers every percept with a
//! uniformly random action. The other policies exist to exercise the
//! harness: `first` always plays action 0, `silent` completes the handshake
//! and then never answers, `malformed` answers with garbage.

use std::io::{self, BufRead, Write};

use clap::{Parser, ValueEnum};
use rand::Rng;
use upsilon_core::external::{FromAgent, ToAgent};
use upsilon_core::seeding::stream;

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Uniform,
    First,
    Silent,
    Malformed,
}

#[derive(Parser)]
#[command(name = "stdio-agent", version)]
struct Args {
    #[arg(long, value_enum, default_value = "uniform")]
    policy: Policy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn reply(out: &mut impl Write, msg: &FromAgent) -> io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(msg).expect("messages serialize"))?;
    out.flush()
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut actions = 2u32;
    let mut rng = stream(args.seed, &[]);
    for line in stdin.lock().lines() {
        let msg: ToAgent = match serde_json::from_str(&line?) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("stdio-agent: {e}");
                continue;
            }
        };
        match msg {
            ToAgent::Hello { spaces, .. } => {
                actions = spaces.actions;
                reply(&mut out, &FromAgent::Ready { concurrency: 1 })?;
            }
            ToAgent::Reset { episode } => rng = stream(args.seed, &[episode]),
            ToAgent::Percept { .. } => match args.policy {
                Policy::Uniform => reply(&mut out, &FromAgent::Action { a: i64::from(rng.gen_range(0..actions)) })?,
                Policy::First => reply(&mut out, &FromAgent::Action { a: 0 })?,
                Policy::Silent => {}
                Policy::Malformed => {
                    writeln!(out, "action please")?;
                    out.flush()?;
                }
            },
            ToAgent::Bye => break,
        }
    }
    Ok(())
}

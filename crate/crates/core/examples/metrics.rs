//! ROUGE and BLEU over a handful of system outputs.

use seqcopynet::evalmetrics::{evaluate, EvalReport};
use seqcopynet::spanoracle::tokenize;
use seqcopynet::Result;

pub fn run_example() -> Result<EvalReport> {
    let outputs = [
        "central bank raises interest rates",
        "rain floods the capital",
        "company reports record quarterly profits",
    ];
    let references = [
        "central bank raises interest rates again",
        "heavy rain floods capital city",
        "company reports record profits",
    ];
    let cands: Vec<Vec<String>> = outputs.iter().map(|s| tokenize(s)).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|s| tokenize(s)).collect();
    evaluate(&cands, &refs)
}

fn main() -> Result<()> {
    print!("{}", run_example()?.to_report());
    Ok(())
}

//! Derives copy spans from raw sentence pairs and reports how much of the
//! target side is copied.

use seqcopynet::spanoracle::{
    build_vocab, corpus_stats, format_spans, parse_corpus, CorpusStats, Side, TrainingInstance,
};
use seqcopynet::Result;

const CORPUS: &str = "\
the central bank raised interest rates on tuesday\tcentral bank raises interest rates
heavy rain flooded the capital city overnight\theavy rain floods capital city
the company reported record profits for the quarter\tcompany reports record profits
officials said the bridge will reopen next month\tbridge to reopen next month
";

pub fn run_example() -> Result<(Vec<String>, CorpusStats)> {
    let corpus = parse_corpus(CORPUS)?;
    let src = build_vocab(&corpus, 1, Side::Source)?;
    // A tiny threshold keeps rare target words out of the vocabulary, so
    // single copies of them show up too.
    let tgt = build_vocab(&corpus, 2, Side::Target)?;
    let mut lines = Vec::new();
    let mut instances = Vec::new();
    for pair in &corpus {
        let inst = TrainingInstance::from_pair(pair, &src, &tgt, 5)?;
        let mut marked = Vec::new();
        let mut i = 0;
        while i < inst.target.len() {
            match inst.spans.iter().find(|s| s.tgt_start == i) {
                Some(s) => {
                    marked.push(format!("[{}]", inst.target[s.tgt_start..=s.tgt_end].join(" ")));
                    i = s.tgt_end + 1;
                }
                None => {
                    marked.push(inst.target[i].clone());
                    i += 1;
                }
            }
        }
        lines.push(format!("{}\t{}", marked.join(" "), format_spans(&inst.spans)));
        instances.push(inst);
    }
    Ok((lines, corpus_stats(&instances)?))
}

fn main() -> Result<()> {
    let (lines, stats) = run_example()?;
    for l in lines {
        println!("{l}");
    }
    print!("\n{}", stats.report());
    Ok(())
}

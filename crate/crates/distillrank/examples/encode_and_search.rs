//! The encoder and the brute-force index: tokenize, embed, score with the
//! temperature-scaled cosine, and retrieve top-K exactly.
//!
//! Run with: cargo run --example encode_and_search

use distillrank::data::{Corpus, Passage, Query};
use distillrank::encoder::EncoderModel;
use distillrank::retrieval::{build_index, retrieve_topk};

fn main() -> anyhow::Result<()> {
    let model = EncoderModel::new(64, 1 << 15, 0.05, 42)?;

    let a = model.encode_text("The cat sat on the mat");
    let b = model.encode_text("the CAT sat on the mat"); // case-folded: same bag
    let c = model.encode_text("orbital mechanics of small moons");
    println!("s(a, a) = {:.4}  (1/tau)", model.similarity(&a, &a));
    println!("s(a, b) = {:.4}  (identical after case folding)", model.similarity(&a, &b));
    println!("s(a, c) = {:.4}  (unrelated)", model.similarity(&a, &c));

    let corpus = Corpus::from_passages(vec![
        Passage { id: "cats".into(), title: "Cats".into(), body: "cats sit on mats and chase string".into() },
        Passage { id: "moons".into(), title: "Moons".into(), body: "small moons follow elliptical orbits".into() },
        Passage { id: "bread".into(), title: "Bread".into(), body: "sourdough needs time and warm water".into() },
    ])?;
    let index = build_index(&model, &corpus);
    println!("\nindex: {} passages, fingerprint {}...", index.len(), &index.fingerprint()[..16]);

    let query = Query { id: "q".into(), text: "where do cats sit".into() };
    let ranked = retrieve_topk(&index, &model, &query, 3)?;
    println!("top-3 for \"{}\":", query.text);
    for (rank, (id, score)) in ranked.entries.iter().enumerate() {
        println!("  {}. {id:<6} score {score:.4}", rank + 1);
    }
    Ok(())
}

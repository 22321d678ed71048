//! Builds prompt sets from the builtin vocabulary and shows how far apart
//! the stand-in text embeddings start.
//!
//! cargo run --release --example sapg_prompts -- [M] [K]

use symdec::sapg::{build_prompt_set, embed_prompts, PromptPolicy, Vocabulary};

fn main() -> symdec::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (m, k) = (args.first().copied().unwrap_or(25), args.get(1).copied().unwrap_or(4));
    let vocab = Vocabulary::builtin();

    let first9 = Vocabulary::new(&vocab.classes()[..9])?;
    println!("first nine classes, M=3 K=3:");
    print!("{}", build_prompt_set(&first9, 3, 3, PromptPolicy::Sequential, 0)?.to_text());

    let set = build_prompt_set(&vocab, m, k, PromptPolicy::Sequential, 0)?;
    println!("\nM={m} K={k}:");
    print!("{}", set.to_text());

    let emb = embed_prompts(&set, 64, 0)?.embeddings;
    let rows: Vec<&[f32]> = emb.data().chunks(64).collect();
    let mut worst = f32::MIN;
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            worst = worst.max(rows[a].iter().zip(rows[b]).map(|(x, y)| x * y).sum());
        }
    }
    println!("\nlargest cosine between two prompt embeddings (D_txt=64): {worst:.3}");
    Ok(())
}

//! Stand-in word embeddings must keep distinct classes apart at the
//! vocabulary size of the full frequent-object list.

use symdec::sapg::{build_prompt_set, embed_prompts, PromptPolicy, Vocabulary};

const CLASSES: usize = 2081;
const D_TXT: usize = 64;

#[test]
fn single_word_classes_stay_below_cosine_0_9() {
    // the builtin list has the first 100 classes; the rest are filler words
    let builtin = Vocabulary::builtin();
    let mut words: Vec<String> = builtin.classes().iter().filter(|c| !c.contains(' ')).cloned().collect();
    let mut i = 0;
    while words.len() < CLASSES {
        words.push(format!("object{i}"));
        i += 1;
    }
    let vocab = Vocabulary::new(&words).unwrap();
    let set = build_prompt_set(&vocab, CLASSES, 1, PromptPolicy::Sequential, 0).unwrap();
    let emb = embed_prompts(&set, D_TXT, 0).unwrap().embeddings;
    let rows: Vec<&[f32]> = emb.data().chunks(D_TXT).collect();
    let mut worst = f64::MIN;
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            let c: f64 = rows[a].iter().zip(rows[b]).map(|(x, y)| *x as f64 * *y as f64).sum();
            worst = worst.max(c);
        }
    }
    assert!(worst < 0.9, "max cosine {worst}");
}

//! Seeded synthetic dialogue-inference corpus.
//!
//! Every dialogue mentions one fact token (a pet, a sport, ...) and the gold
//! answer repeats it. The four counterfactuals are the gold answer with the
//! fact token swapped for another member of the same category, so the only
//! way to tell gold from negative is to read the fact off the context.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Difficulty, InferenceExample, QuestionType, Utterance};

struct Category {
    values: [&'static str; 8],
    mention: &'static [&'static str],
    answer: &'static str,
}

const CATEGORIES: [Category; 5] = [
    Category {
        values: ["dog", "cat", "parrot", "rabbit", "hamster", "turtle", "goldfish", "pony"],
        mention: &[
            "i have to take my {} to the vet tomorrow .",
            "my {} kept me awake all night .",
            "i bought a new bed for my {} .",
        ],
        answer: "the speaker looks after a pet {} .",
    },
    Category {
        values: ["tennis", "soccer", "hockey", "golf", "rugby", "cricket", "volleyball", "baseball"],
        mention: &[
            "we have a {} match this weekend .",
            "i hurt my knee playing {} yesterday .",
            "my coach says my {} is improving .",
        ],
        answer: "the speaker plays {} regularly .",
    },
    Category {
        values: ["pizza", "sushi", "pasta", "tacos", "curry", "noodles", "salad", "burgers"],
        mention: &[
            "i am cooking {} for dinner tonight .",
            "that place serves the best {} in town .",
            "i ate too much {} at lunch .",
        ],
        answer: "the speaker wants to eat {} .",
    },
    Category {
        values: ["guitar", "piano", "violin", "drums", "flute", "trumpet", "cello", "harp"],
        mention: &[
            "i practiced the {} for three hours .",
            "my {} teacher cancelled the lesson .",
            "i finally tuned my old {} .",
        ],
        answer: "the speaker is learning the {} .",
    },
    Category {
        values: ["paris", "tokyo", "london", "rome", "berlin", "madrid", "sydney", "cairo"],
        mention: &[
            "my flight to {} leaves on friday .",
            "i just got back from {} last night .",
            "my sister moved to {} last month .",
        ],
        answer: "the speaker is travelling to {} .",
    },
];

const FILLERS: [&str; 12] = [
    "how was your day ?",
    "it was fine , thanks for asking .",
    "did you sleep well last night ?",
    "i am a bit tired today .",
    "that sounds great .",
    "let us talk about it later .",
    "are you free this evening ?",
    "i am not sure yet .",
    "what are you up to ?",
    "nothing much , just relaxing .",
    "really ? tell me more .",
    "i will call you tomorrow .",
];

/// Number of distinct fact tokens per category.
pub const VALUES_PER_CATEGORY: usize = 8;

/// Every fact token across all categories.
pub fn fact_values() -> Vec<&'static str> {
    CATEGORIES.iter().flat_map(|c| c.values).collect()
}

/// Generates `n` examples with ids `<prefix>-<i>`.
pub fn generate(n: usize, seed: u64, id_prefix: &str) -> Vec<InferenceExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| one_example(&mut rng, format!("{id_prefix}-{i:04}"))).collect()
}

fn one_example(rng: &mut ChaCha8Rng, id: String) -> InferenceExample {
    let cat = &CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
    let fact_idx = rng.gen_range(0..VALUES_PER_CATEGORY);
    let fact = cat.values[fact_idx];
    let n_utts = rng.gen_range(3..=5);
    let fact_pos = rng.gen_range(1..=n_utts);
    let question = QuestionType::ALL[rng.gen_range(0..QuestionType::ALL.len())];
    let target_index = if question == QuestionType::SubsequentEventClipped {
        rng.gen_range(fact_pos..=n_utts)
    } else {
        rng.gen_range(1..=n_utts)
    };
    let mut fillers: Vec<&str> = FILLERS.to_vec();
    fillers.shuffle(rng);
    let mention = cat.mention[rng.gen_range(0..cat.mention.len())];
    let dialogue = (1..=n_utts)
        .map(|i| Utterance {
            speaker: if i % 2 == 1 { "A".into() } else { "B".into() },
            text: if i == fact_pos {
                mention.replace("{}", fact)
            } else {
                fillers[i].to_string()
            },
            index: i,
        })
        .collect();
    let mut others: Vec<usize> = (0..VALUES_PER_CATEGORY).filter(|&v| v != fact_idx).collect();
    others.shuffle(rng);
    let counterfactuals = others[..4]
        .iter()
        .map(|&v| cat.answer.replace("{}", cat.values[v]))
        .collect();
    let difficulty = Some(Difficulty::ALL[rng.gen_range(0..3)]);
    InferenceExample {
        id,
        dialogue,
        target_index,
        question,
        answer: cat.answer.replace("{}", fact),
        counterfactuals,
        difficulty,
    }
}

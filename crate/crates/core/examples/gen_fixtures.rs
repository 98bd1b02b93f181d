//! Writes the bundled fixture corpus under the given directory (default
//! `fixtures`). Output is deterministic.
//!
//! ```text
//! cargo run -p mmvu-core --example gen_fixtures -- fixtures
//! ```

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use mmvu_core::adapter::{
    write_records, ResponseRecord, TAG_CGR_EXTRACT, TAG_MAIN, TAG_VAR_ATTENTION,
};
use mmvu_core::datagen::generation_tag;
use mmvu_core::{
    serialize_benchmark, AttentionDump, BenchmarkItem, Category, OptionLetter, Options, Polarity,
    SegmentLengths,
};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

struct Question {
    text: &'static str,
    options: [&'static str; 4],
    answer: OptionLetter,
}

struct PairSpec {
    pos: Question,
    neg: Question,
}

const fn q(text: &'static str, options: [&'static str; 4], answer: OptionLetter) -> Question {
    Question {
        text,
        options,
        answer,
    }
}

use OptionLetter::{A, B};

/// Two pairs per category, in category order.
const PAIRS: [PairSpec; 24] = [
    PairSpec {
        pos: q(
            "What number is painted on the bus?",
            ["42", "24", "47", "12"],
            A,
        ),
        neg: q(
            "The bus shows the number 24, right?",
            [
                "Yes, it shows 24",
                "No, it shows 42",
                "It shows no number",
                "It shows 74",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Which word is written on the shop sign?",
            ["BAKERY", "BANKERY", "BAKER", "BRAKERY"],
            A,
        ),
        neg: q(
            "Is the word on the sign spelled BANKERY?",
            [
                "Yes, BANKERY",
                "No, it reads BAKERY",
                "No, it reads BANK",
                "There is no sign",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Is there a cat on the sofa?",
            ["Yes", "No", "Only a dog", "Only a pillow"],
            A,
        ),
        neg: q(
            "Is the animal on the sofa a rabbit?",
            [
                "Yes, a rabbit",
                "No, it is a cat",
                "No, it is a dog",
                "There is no animal",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Is there a lamp on the desk?",
            ["Yes", "No", "Only a vase", "Only books"],
            A,
        ),
        neg: q(
            "Is that a candle rather than a lamp on the desk?",
            [
                "Yes, a candle",
                "No, it is a lamp",
                "It is a torch",
                "It is a clock",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What color is the umbrella?",
            ["Red", "Blue", "Green", "Yellow"],
            A,
        ),
        neg: q(
            "The umbrella is blue, isn't it?",
            [
                "Yes, blue",
                "No, it is red",
                "No, it is white",
                "No, it is black",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What material does the table look like?",
            ["Wood", "Glass", "Metal", "Stone"],
            A,
        ),
        neg: q(
            "Is the table made of glass?",
            [
                "Yes, glass",
                "No, it is wooden",
                "No, it is plastic",
                "No, it is marble",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "How many apples are in the bowl?",
            ["Three", "Two", "Four", "Five"],
            A,
        ),
        neg: q(
            "There are five apples in the bowl, correct?",
            [
                "Yes, five",
                "No, there are three",
                "No, there are six",
                "No, there are none",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "How many people are on the bench?",
            ["Two", "One", "Three", "Four"],
            A,
        ),
        neg: q(
            "Are there four people on the bench?",
            [
                "Yes, four",
                "No, there are two",
                "No, there are five",
                "No, nobody",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What shape is the window?",
            ["Round", "Square", "Triangular", "Hexagonal"],
            A,
        ),
        neg: q(
            "The window is square, right?",
            [
                "Yes, square",
                "No, it is round",
                "No, it is oval",
                "No, it is arched",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What shape is the road sign?",
            ["Octagon", "Circle", "Triangle", "Rectangle"],
            A,
        ),
        neg: q(
            "Is the road sign triangular?",
            [
                "Yes, triangular",
                "No, it is an octagon",
                "No, it is a circle",
                "No, it is a diamond",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What is the man doing with his arms?",
            [
                "Raising them",
                "Crossing them",
                "Resting them",
                "Hiding them",
            ],
            A,
        ),
        neg: q(
            "Are the man's arms crossed?",
            [
                "Yes, crossed",
                "No, they are raised",
                "No, they are in pockets",
                "No, they are behind him",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Is the child sitting or standing?",
            ["Sitting", "Standing", "Lying down", "Jumping"],
            A,
        ),
        neg: q(
            "The child is standing, isn't she?",
            [
                "Yes, standing",
                "No, she is sitting",
                "No, she is running",
                "No, she is kneeling",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Where is the dog relative to the car?",
            ["Left of it", "Right of it", "On top of it", "Inside it"],
            A,
        ),
        neg: q(
            "Is the dog to the right of the car?",
            [
                "Yes, to the right",
                "No, to the left",
                "No, under it",
                "No, behind it",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What is above the fireplace?",
            ["A painting", "A clock", "A mirror", "A shelf"],
            A,
        ),
        neg: q(
            "Is there a clock above the fireplace?",
            [
                "Yes, a clock",
                "No, a painting",
                "No, a television",
                "No, a window",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What mood does the scene convey?",
            ["Joyful", "Somber", "Tense", "Bored"],
            A,
        ),
        neg: q(
            "The scene conveys a somber mood, right?",
            [
                "Yes, somber",
                "No, it is joyful",
                "No, it is angry",
                "No, it is fearful",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Which holiday do the decorations suggest?",
            ["Christmas", "Halloween", "Easter", "New Year"],
            A,
        ),
        neg: q(
            "Do the decorations suggest Halloween?",
            [
                "Yes, Halloween",
                "No, Christmas",
                "No, Easter",
                "No, Diwali",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Which landmark is shown?",
            ["Eiffel Tower", "Tokyo Tower", "Big Ben", "CN Tower"],
            A,
        ),
        neg: q(
            "Is this landmark Tokyo Tower?",
            [
                "Yes, Tokyo Tower",
                "No, the Eiffel Tower",
                "No, the Space Needle",
                "No, Big Ben",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Which city is this skyline?",
            ["New York", "Chicago", "Boston", "Seattle"],
            A,
        ),
        neg: q(
            "Is this the Chicago skyline?",
            ["Yes, Chicago", "No, New York", "No, Denver", "No, Miami"],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What does the chart on the board show?",
            ["A sine wave", "A bar chart", "A pie chart", "A map"],
            A,
        ),
        neg: q(
            "Is the board showing a cosine wave shifted by pi?",
            [
                "Yes, shifted cosine",
                "No, a sine wave",
                "No, a parabola",
                "No, a histogram",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Which instrument is on the bench?",
            ["Stethoscope", "Microscope", "Telescope", "Caliper"],
            A,
        ),
        neg: q(
            "Is the instrument a microscope?",
            [
                "Yes, a microscope",
                "No, a stethoscope",
                "No, a barometer",
                "No, a compass",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What are the children playing?",
            ["Soccer", "Basketball", "Tennis", "Chess"],
            A,
        ),
        neg: q(
            "Are the children playing basketball?",
            [
                "Yes, basketball",
                "No, soccer",
                "No, volleyball",
                "No, baseball",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What is the woman doing?",
            ["Cooking", "Reading", "Painting", "Sleeping"],
            A,
        ),
        neg: q(
            "Is the woman painting?",
            ["Yes, painting", "No, cooking", "No, sewing", "No, dancing"],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "What is the relationship between the two people?",
            ["Teacher and student", "Siblings", "Strangers", "Rivals"],
            A,
        ),
        neg: q(
            "Are the two people rivals?",
            [
                "Yes, rivals",
                "No, teacher and student",
                "No, coworkers",
                "No, neighbours",
            ],
            B,
        ),
    },
    PairSpec {
        pos: q(
            "Who is holding the leash?",
            ["The girl", "The boy", "The man", "Nobody"],
            A,
        ),
        neg: q(
            "Is the boy holding the leash?",
            [
                "Yes, the boy",
                "No, the girl",
                "No, the woman",
                "No, it is tied",
            ],
            B,
        ),
    },
];

/// Scripted replies for pair `b` of category `k`: UF for the first six
/// categories, NR for the next three, NF for the last three. Pair `a` is
/// always UR.
fn scripted(k: usize, pair_b: bool, polarity: Polarity, pair_def: &Question) -> String {
    let wrong = OptionLetter::from_index((pair_def.answer.index() + 2) % 4).unwrap();
    let correct = match (pair_b, polarity) {
        (false, _) => true,
        (true, Polarity::Positive) => k < 6,
        (true, Polarity::Negative) => (6..9).contains(&k),
    };
    let letter = if correct { pair_def.answer } else { wrong };
    match (k + pair_b as usize) % 4 {
        0 => letter.to_string(),
        1 => format!("{letter}."),
        2 => format!("The answer is ({letter})."),
        _ if !correct && k >= 9 && polarity == Polarity::Negative => {
            "I cannot tell from the picture.".to_string()
        }
        _ => format!("It is {}.", pair_def.options[letter.index()].to_lowercase()),
    }
}

fn logits_for(rng: &mut Xoshiro256StarStar, chosen: OptionLetter) -> Vec<f64> {
    (0..4)
        .map(|i| {
            let noise = (rng.next_u64() % 1000) as f64 / 1000.0;
            if i == chosen.index() {
                2.0 + noise
            } else {
                noise - 0.5
            }
        })
        .collect()
}

fn scene_image(k: usize) -> RgbImage {
    let k = k as u32;
    RgbImage::from_fn(32, 24, |x, y| {
        let r = ((x * 8 + k * 20) % 256) as u8;
        let g = ((y * 10 + k * 35) % 256) as u8;
        let b = (((x + y) * 5 + k * 50) % 256) as u8;
        Rgb([r, g, b])
    })
}

fn random_dump(rng: &mut Xoshiro256StarStar, seg: SegmentLengths) -> AttentionDump {
    let n = seg.total();
    let mut values = Vec::with_capacity(seg.heads as usize * n * n);
    for _ in 0..seg.heads {
        for row in 0..n {
            let raw: Vec<f32> = (0..n)
                .map(|col| {
                    if col <= row {
                        (rng.next_u32() % 1000 + 1) as f32
                    } else {
                        0.0
                    }
                })
                .collect();
            let sum: f32 = raw.iter().sum();
            values.extend(raw.into_iter().map(|v| v / sum));
        }
    }
    AttentionDump::new(seg, values).expect("valid dump")
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).unwrap();
    }
    fs::write(path, bytes).unwrap();
}

fn main() {
    let root = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixtures".to_string());
    let root = Path::new(&root);
    let mut rng = Xoshiro256StarStar::seed_from_u64(20240611);
    let seg = SegmentLengths {
        heads: 2,
        n_sys: 3,
        n_vis: 6,
        n_q: 4,
        n_a: 2,
        grid_rows: 2,
        grid_cols: 3,
    };

    let mut items = Vec::new();
    let mut records = Vec::new();
    for (idx, pair_def) in PAIRS.iter().enumerate() {
        let k = idx / 2;
        let pair_b = idx % 2 == 1;
        let category = Category::ALL[k];
        let pair_id = format!("{}-{}", category.as_str(), if pair_b { "b" } else { "a" });
        let image_ref = format!("images/{}.png", category.as_str());
        for (polarity, question) in [
            (Polarity::Positive, &pair_def.pos),
            (Polarity::Negative, &pair_def.neg),
        ] {
            let item_id = format!(
                "{pair_id}-{}",
                if polarity == Polarity::Positive {
                    "pos"
                } else {
                    "neg"
                }
            );
            items.push(BenchmarkItem {
                item_id: item_id.clone(),
                pair_id: pair_id.clone(),
                image_ref: image_ref.clone(),
                category,
                polarity,
                question: question.text.to_string(),
                options: Options::new(question.options.map(str::to_string)),
                answer: question.answer,
            });
            let text = scripted(k, pair_b, polarity, question);
            let chosen = {
                let o = Options::new(question.options.map(str::to_string));
                mmvu_core::extract_option(&text, &o)
                    .letter
                    .unwrap_or(question.answer)
            };
            let dump_name = format!("dumps/{item_id}.bin");
            write(
                &root.join(&dump_name),
                random_dump(&mut rng, seg).to_bytes(),
            );
            records.push(ResponseRecord {
                item_id: item_id.clone(),
                tag: TAG_CGR_EXTRACT.to_string(),
                text: format!(
                    "Objects: the scene for {}. Text/Numbers: none beyond the question subject.",
                    category.as_str()
                ),
                option_logits: None,
                attention_file: None,
            });
            records.push(ResponseRecord {
                item_id: item_id.clone(),
                tag: TAG_VAR_ATTENTION.to_string(),
                text: text.clone(),
                option_logits: None,
                attention_file: Some(dump_name.clone()),
            });
            records.push(ResponseRecord {
                item_id,
                tag: TAG_MAIN.to_string(),
                text,
                option_logits: Some(logits_for(&mut rng, chosen)),
                attention_file: Some(dump_name),
            });
        }
        if !pair_b {
            let mut png = Vec::new();
            scene_image(k)
                .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
                .unwrap();
            write(&root.join(&image_ref), png);
        }
    }
    let mut bench = Vec::new();
    serialize_benchmark(&items, &mut bench).unwrap();
    write(&root.join("benchmark.jsonl"), bench);
    let mut log = Vec::new();
    write_records(&records, &mut log).unwrap();
    write(&root.join("responses.jsonl"), log);

    let single = random_dump(&mut rng, seg);
    write(&root.join("attention.bin"), single.to_bytes());

    write_datagen(root);
}

fn v3_reply(id: &str, uncertain: bool) -> String {
    let round = |q: &str, opts: [&str; 4], ans: usize| {
        serde_json::json!([
            {"from": "human", "value": q, "options": opts},
            {"from": "gpt", "value": opts[ans]}
        ])
    };
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let rounds: [(&str, [&str; 4], &str, [&str; 4]); 3] = [
        (
            "Are there two people in the kitchen?",
            [
                "Yes, two people are cooking",
                "Yes, because the room is empty",
                "No, because two people are cooking",
                "No, nobody is there",
            ],
            "Are there three people in the kitchen?",
            [
                "No, there are two people",
                "No, because the kitchen is closed",
                "Yes, there are two people",
                "Yes, three chefs are visible",
            ],
        ),
        (
            "Is the kettle on the stove?",
            [
                "Yes, it sits on a burner",
                "Yes, because it is on the floor",
                "No, it sits on a burner",
                "No, there is no kettle",
            ],
            "Is the kettle on the table in the image?",
            [
                "No, it is on the stove",
                "No, because tables cannot hold kettles",
                "Yes, it is on the stove",
                "Yes, next to the sink",
            ],
        ),
        (
            "Is the apron blue?",
            [
                "Yes, it is plain blue",
                "Yes, because aprons are always blue",
                "No, it is plain blue",
                "No, it is striped red",
            ],
            "Isn't the apron green?",
            [
                "No, it is blue",
                "No, because it is night",
                "Yes, it is blue",
                "Yes, dark green",
            ],
        ),
    ];
    for (i, (p, p_opts, n, n_opts)) in rounds.iter().enumerate() {
        pos.extend(round(p, *p_opts, i % 2).as_array().unwrap().clone());
        neg.extend(round(n, *n_opts, 0).as_array().unwrap().clone());
    }
    if uncertain {
        pos.extend(
            round(
                "How old is the man?",
                ["Uncertain", "Thirty", "Forty", "Fifty"],
                0,
            )
            .as_array()
            .unwrap()
            .clone(),
        );
    }
    serde_json::to_string_pretty(&serde_json::json!({
        "id": id,
        "image": format!("{id}.png"),
        "conversations-pos": pos,
        "conversations-neg": neg,
    }))
    .unwrap()
}

fn write_datagen(root: &Path) {
    let dir = root.join("datagen");
    let mut records = Vec::new();
    for (i, name) in ["kitchen", "street", "garden", "office"].iter().enumerate() {
        let mut png = Vec::new();
        scene_image(i + 3)
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .unwrap();
        write(&dir.join("images").join(format!("{name}.png")), png);
        let reply = match i {
            // One unparseable reply that succeeds on retry.
            1 => {
                records.push(ResponseRecord {
                    item_id: name.to_string(),
                    tag: generation_tag(0),
                    text: "Sure! Here is the JSON you asked for.".into(),
                    option_logits: None,
                    attention_file: None,
                });
                (
                    generation_tag(1),
                    format!("```json\n{}\n```", v3_reply(name, false)),
                )
            }
            // Never valid: skipped after the retries.
            3 => {
                for attempt in 0..2 {
                    records.push(ResponseRecord {
                        item_id: name.to_string(),
                        tag: generation_tag(attempt),
                        text: "{\"id\": \"office\", \"conversations\": []}".into(),
                        option_logits: None,
                        attention_file: None,
                    });
                }
                (
                    generation_tag(2),
                    "I could not produce JSON for this image.".to_string(),
                )
            }
            _ => (generation_tag(0), v3_reply(name, i % 2 == 0)),
        };
        records.push(ResponseRecord {
            item_id: name.to_string(),
            tag: reply.0,
            text: reply.1,
            option_logits: None,
            attention_file: None,
        });
    }
    let mut log = Vec::new();
    write_records(&records, &mut log).unwrap();
    write(&dir.join("responses.jsonl"), log);
}

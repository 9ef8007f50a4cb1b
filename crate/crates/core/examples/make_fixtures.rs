//! Regenerates the files under `fixtures/`: two toy distributional embedding
//! sets, a small knowledge graph, the label vectors the full pipeline derives
//! from them, and the desk-scale training presets.
//!
//! Concept vectors mix a component shared by every concept, a component shared
//! within a superclass and an individual component. Each source sees them
//! through its own isometric map plus a little noise, so cosine geometry
//! survives in both. Visual-relation edges link exactly the look-alike groups.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semco::cli::build_embeddings;
use semco::labelsem::{build_label_matrix, EmbeddingMatrix, VISUAL_RELATIONS};
use semco::trainer::{CIFAR100_CLASSES, CIFAR10_CLASSES};

const LATENT: usize = 64;
const GLOVE_DIM: usize = 100;
const W2V_DIM: usize = 64;
const COMMON: f64 = 0.75;
const TOPIC: f64 = 0.55;
const OWN: f64 = 0.75;
const NOISE: f64 = 0.02;

const SUPERCLASSES: [&[&str]; 22] = [
    &["beaver", "dolphin", "otter", "seal", "whale"],
    &["flatfish", "ray", "shark", "trout"],
    &["orchid", "poppy", "rose", "sunflower", "tulip"],
    &["bottle", "bowl", "can", "cup", "plate"],
    &["apple", "mushroom", "orange", "pear", "sweet", "pepper"],
    &["clock", "keyboard", "lamp", "telephone", "television"],
    &["bed", "chair", "couch", "table", "wardrobe"],
    &["bee", "beetle", "butterfly", "caterpillar", "cockroach"],
    &["bear", "leopard", "lion", "tiger", "wolf"],
    &["bridge", "castle", "house", "road", "skyscraper"],
    &["cloud", "forest", "mountain", "plain", "sea"],
    &["camel", "cattle", "chimpanzee", "elephant", "kangaroo"],
    &["fox", "porcupine", "possum", "raccoon", "skunk"],
    &["crab", "lobster", "snail", "spider", "worm"],
    &["baby", "boy", "girl", "man", "woman"],
    &["crocodile", "dinosaur", "lizard", "snake", "turtle"],
    &["hamster", "mouse", "rabbit", "shrew", "squirrel"],
    &["maple_tree", "oak_tree", "palm_tree", "pine_tree", "willow_tree"],
    &["bicycle", "bus", "motorcycle", "pickup_truck", "train", "wheel", "spoke"],
    &["lawn", "mower", "rocket", "streetcar", "tank", "tractor"],
    &["airplane", "automobile", "ship", "truck"],
    &["bird", "cat", "deer", "dog", "frog", "horse"],
];

/// Look-alike groups joined by visual-relation edges. `aquarium_fish` is
/// absent from both vocabularies and is placed by retrofitting alone.
const GROUPS: [&[&str]; 7] = [
    &["aquarium_fish", "flatfish", "trout"],
    &["bicycle", "motorcycle"],
    &["boy", "girl"],
    &["crab", "lobster"],
    &["dolphin", "whale"],
    &["man", "woman"],
    &["oak_tree", "pine_tree"],
];

const NON_VISUAL_EDGES: [(&str, &str, &str); 8] = [
    ("RelatedTo", "boy", "man"),
    ("RelatedTo", "girl", "woman"),
    ("AtLocation", "crab", "sea"),
    ("UsedFor", "truck", "road"),
    ("RelatedTo", "cat", "dog"),
    ("HasA", "bicycle", "wheel"),
    ("CapableOf", "bird", "airplane"),
    ("Antonym", "man", "woman"),
];

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `rows × LATENT` matrix with orthonormal columns.
fn isometry(rng: &mut impl Rng, rows: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(rows, LATENT, |_, _| gaussian(rng));
    raw.qr().q()
}

fn write_source(path: &Path, terms: &[(String, Vec<f64>)], map: &DMatrix<f64>, rng: &mut impl Rng) {
    let mut emb = EmbeddingMatrix::new(map.nrows());
    for (term, z) in terms {
        let image = map * nalgebra::DVector::from_column_slice(z);
        let v: Vec<f64> = image.iter().map(|x| ((x + NOISE * gaussian(rng)) * 1e4).round() / 1e4).collect();
        emb.push(term.clone(), &v).expect("valid row");
    }
    emb.write(path).expect("write embeddings");
}

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    fs::create_dir_all(&dir).expect("fixtures dir");
    let mut rng = ChaCha8Rng::seed_from_u64(2021);

    let common = unit(&mut rng, LATENT);
    let mut concepts: Vec<(String, Vec<f64>)> = Vec::new();
    for members in SUPERCLASSES {
        let topic = unit(&mut rng, LATENT);
        for &m in members {
            let own = unit(&mut rng, LATENT);
            let z = (0..LATENT)
                .map(|i| COMMON * common[i] + TOPIC * topic[i] + OWN * own[i])
                .collect();
            concepts.push((m.to_string(), z));
        }
    }
    let glove_only = ("zebra".to_string(), unit(&mut rng, LATENT));
    let w2v_only = ("kite".to_string(), unit(&mut rng, LATENT));

    let glove_map = isometry(&mut rng, GLOVE_DIM);
    let w2v_map = isometry(&mut rng, W2V_DIM);
    let mut glove_terms = concepts.clone();
    glove_terms.push(glove_only);
    let mut w2v_terms = concepts.clone();
    w2v_terms.push(w2v_only);
    write_source(&dir.join("glove.txt"), &glove_terms, &glove_map, &mut rng);
    write_source(&dir.join("w2v.txt"), &w2v_terms, &w2v_map, &mut rng);

    let mut graph = String::from("# relation\tterm\tterm\tweight\n");
    for (g, members) in GROUPS.iter().enumerate() {
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                let rel = VISUAL_RELATIONS[g % 2];
                graph.push_str(&format!("{rel}\t{a}\t{b}\n"));
            }
        }
    }
    graph.push_str("SimilarTo\twheel\tspoke\t0.5\n");
    for (rel, a, b) in NON_VISUAL_EDGES {
        graph.push_str(&format!("{rel}\t{a}\t{b}\n"));
    }
    fs::write(dir.join("graph.tsv"), graph).expect("write graph");

    let relations: Vec<String> = VISUAL_RELATIONS.iter().map(|s| s.to_string()).collect();
    let merged = build_embeddings(
        &dir.join("glove.txt"),
        &dir.join("w2v.txt"),
        &dir.join("graph.tsv"),
        &relations,
        128,
        10,
    )
    .expect("pipeline");
    build_label_matrix(&merged, &CIFAR100_CLASSES)
        .expect("cifar-100 labels")
        .write(dir.join("cifar100_labels.emb"))
        .expect("write");
    build_label_matrix(&merged, &CIFAR10_CLASSES)
        .expect("cifar-10 labels")
        .write(dir.join("cifar10_labels.emb"))
        .expect("write");
    fs::write(dir.join("cifar100_labels.txt"), CIFAR100_CLASSES.join("\n") + "\n").expect("write");
    fs::write(dir.join("cifar10_labels.txt"), CIFAR10_CLASSES.join("\n") + "\n").expect("write");

    let mut tiny = EmbeddingMatrix::new(4);
    for (t, v) in [
        ("cat", [0.9, 0.1, 0.0, 0.2]),
        ("kitten", [0.8, 0.2, 0.1, 0.1]),
        ("dog", [0.1, 0.9, 0.2, 0.0]),
        ("truck", [0.0, 0.1, 0.9, 0.3]),
        ("lorry", [0.1, 0.0, 0.7, 0.6]),
    ] {
        tiny.push(t, &v).expect("row");
    }
    tiny.write(dir.join("tiny.txt")).expect("write");
    fs::write(
        dir.join("tiny_graph.tsv"),
        "Synonym\ttruck\tlorry\nIsA\tkitten\tcat\nRelatedTo\tcat\tdog\nSimilarTo\tpuppy\tdog\n",
    )
    .expect("write");
}

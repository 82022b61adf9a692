//! Deterministic synthetic data: a ten-topic bilingual corpus with queries,
//! scored sentence pairs, a planted teacher whose cosines equal the
//! reference scores, and paired vectors for the distillation heads.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Document, Query};
use crate::evalkit::{PairRecord, Regime};
use crate::scalar::normalize_in_place;

const TOPICS: [&[&str]; 10] = [
    &[
        "star",
        "orbit",
        "planet",
        "telescope",
        "galaxy",
        "comet",
        "nebula",
        "gravity",
        "astronomer",
        "eclipse",
        "asteroid",
        "satellite",
        "cosmic",
        "lunar",
        "solar",
        "meteor",
        "spectrum",
        "redshift",
        "quasar",
        "pulsar",
        "constellation",
        "observatory",
        "supernova",
        "orbital",
    ],
    &[
        "pasta",
        "forno",
        "pomodoro",
        "basilico",
        "farina",
        "ricetta",
        "cucina",
        "olio",
        "formaggio",
        "sugo",
        "impasto",
        "lievito",
        "pentola",
        "aglio",
        "cipolla",
        "risotto",
        "brodo",
        "mozzarella",
        "parmigiano",
        "pesto",
        "lasagna",
        "ragù",
        "cottura",
        "sale",
    ],
    &[
        "protein",
        "enzyme",
        "cell",
        "membrane",
        "genome",
        "mutation",
        "ribosome",
        "mitochondria",
        "dna",
        "rna",
        "chromosome",
        "receptor",
        "antibody",
        "metabolism",
        "catalyst",
        "peptide",
        "nucleus",
        "transcription",
        "organelle",
        "cytoplasm",
        "allele",
        "phenotype",
        "kinase",
        "ligand",
    ],
    &[
        "contratto",
        "tribunale",
        "giudice",
        "sentenza",
        "avvocato",
        "ricorso",
        "legge",
        "norma",
        "diritto",
        "clausola",
        "processo",
        "udienza",
        "testimone",
        "appello",
        "codice",
        "giurisprudenza",
        "obbligazione",
        "risarcimento",
        "notaio",
        "decreto",
        "imputato",
        "procura",
        "arbitrato",
        "sanzione",
    ],
    &[
        "compiler",
        "parser",
        "register",
        "pointer",
        "kernel",
        "thread",
        "mutex",
        "cache",
        "syntax",
        "bytecode",
        "interpreter",
        "allocator",
        "stack",
        "heap",
        "linker",
        "debugger",
        "runtime",
        "lexer",
        "opcode",
        "scheduler",
        "semaphore",
        "buffer",
        "segfault",
        "assembly",
    ],
    &[
        "calcio",
        "partita",
        "allenatore",
        "squadra",
        "gol",
        "campionato",
        "portiere",
        "attaccante",
        "difensore",
        "stadio",
        "arbitro",
        "rigore",
        "tifosi",
        "classifica",
        "centrocampo",
        "pallone",
        "trasferta",
        "derby",
        "scudetto",
        "fuorigioco",
        "panchina",
        "dribbling",
        "calciomercato",
        "tribuna",
    ],
    &[
        "volcano",
        "magma",
        "lava",
        "tectonic",
        "earthquake",
        "fault",
        "basalt",
        "granite",
        "sediment",
        "erosion",
        "mantle",
        "crust",
        "glacier",
        "fossil",
        "mineral",
        "crystal",
        "quartz",
        "igneous",
        "strata",
        "seismic",
        "caldera",
        "geyser",
        "tsunami",
        "limestone",
    ],
    &[
        "sinfonia",
        "orchestra",
        "violino",
        "pianoforte",
        "melodia",
        "armonia",
        "spartito",
        "direttore",
        "concerto",
        "opera",
        "soprano",
        "tenore",
        "ritmo",
        "accordo",
        "partitura",
        "violoncello",
        "flauto",
        "sonata",
        "coro",
        "tonalità",
        "crescendo",
        "aria",
        "libretto",
        "conservatorio",
    ],
    &[
        "inflation",
        "interest",
        "bond",
        "equity",
        "dividend",
        "portfolio",
        "liquidity",
        "deficit",
        "tariff",
        "currency",
        "recession",
        "monetary",
        "fiscal",
        "treasury",
        "yield",
        "hedge",
        "leverage",
        "credit",
        "asset",
        "market",
        "volatility",
        "derivative",
        "merger",
        "valuation",
    ],
    &[
        "vigneto",
        "vendemmia",
        "uva",
        "cantina",
        "botte",
        "vitigno",
        "enologo",
        "fermentazione",
        "tannino",
        "barrique",
        "spumante",
        "rosso",
        "bianco",
        "degustazione",
        "annata",
        "sommelier",
        "mosto",
        "calice",
        "aroma",
        "bouquet",
        "etichetta",
        "invecchiamento",
        "nebbiolo",
        "sangiovese",
    ],
];

const COMMON: &[&str] = &[
    "the", "of", "and", "a", "in", "to", "is", "was", "for", "with", "on", "as", "by", "this",
    "that", "from", "are", "it", "its", "which", "also", "more", "these", "new", "il", "la", "di",
    "e", "che", "un", "una", "per", "con", "nel", "della", "del", "sono", "come", "anche", "più",
    "questo", "molto", "dopo", "tra", "ogni", "quando",
];

const ITALIAN_TOPICS: [usize; 5] = [1, 3, 5, 7, 9];

pub const FIXTURE_SEED: u64 = 20_240_601;
pub const N_DOCS: usize = TOPICS.len();

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureCorpus {
    pub documents: Vec<Document>,
    pub queries: Vec<Query>,
    pub pairs: Vec<PairRecord>,
}

fn topic_word(rng: &mut ChaCha8Rng, topic: usize) -> &'static str {
    // Skewed toward the head of the list so term frequencies vary.
    let words = TOPICS[topic];
    let u: f64 = rng.random();
    words[((u * u) * words.len() as f64) as usize]
}

fn sentence(rng: &mut ChaCha8Rng, topic: usize, topic_share: f64, len: usize) -> Vec<&'static str> {
    (0..len)
        .map(|_| {
            let u: f64 = rng.random();
            if u < topic_share {
                topic_word(rng, topic)
            } else if u < topic_share + 0.08 {
                let other = rng.random_range(0..N_DOCS);
                topic_word(rng, other)
            } else {
                COMMON.choose(rng).copied().unwrap_or("the")
            }
        })
        .collect()
}

fn render(words: &[&str]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.chars().next() {
        let upper: String = first.to_uppercase().collect();
        s.replace_range(..first.len_utf8(), &upper);
    }
    s.push('.');
    s
}

fn document(rng: &mut ChaCha8Rng, topic: usize) -> String {
    let target = rng.random_range(950..1050);
    let mut n = 0;
    let mut sentences = Vec::new();
    while n < target {
        let len = rng.random_range(8..16).min(target - n).max(1);
        sentences.push(render(&sentence(rng, topic, 0.45, len)));
        n += len;
    }
    sentences.join(" ")
}

/// Builds the full fixture deterministically from `seed`.
pub fn corpus(seed: u64) -> FixtureCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let documents: Vec<Document> = (0..N_DOCS)
        .map(|t| Document {
            doc_id: format!("doc{t:02}"),
            text: document(&mut rng, t),
            lang: if ITALIAN_TOPICS.contains(&t) {
                "it"
            } else {
                "en"
            }
            .to_string(),
        })
        .collect();
    let mut queries = Vec::new();
    for t in 0..N_DOCS {
        for k in 0..2 {
            let mut words: Vec<&str> = (0..rng.random_range(4..7))
                .map(|_| topic_word(&mut rng, t))
                .collect();
            words.push(COMMON.choose(&mut rng).copied().unwrap_or("the"));
            if k == 1 {
                let other = (t + rng.random_range(1..N_DOCS)) % N_DOCS;
                words.push(topic_word(&mut rng, other));
            }
            queries.push(Query {
                qid: format!("q{t:02}{k}"),
                text: words.join(" "),
                relevant_doc: format!("doc{t:02}"),
            });
        }
    }
    let pairs = pairs(&mut rng, 20);
    FixtureCorpus {
        documents,
        queries,
        pairs,
    }
}

fn pairs(rng: &mut ChaCha8Rng, per_regime: usize) -> Vec<PairRecord> {
    let mut out = Vec::new();
    for regime in [Regime::Sim, Regime::Neutral, Regime::Dissim] {
        for _ in 0..per_regime {
            let t = rng.random_range(0..N_DOCS);
            let u = (t + rng.random_range(1..N_DOCS)) % N_DOCS;
            let (a, b, score) = match regime {
                Regime::Sim => (
                    sentence(rng, t, 0.7, 10),
                    sentence(rng, t, 0.7, 10),
                    rng.random_range(0.7..1.0),
                ),
                Regime::Neutral => {
                    let mut b = sentence(rng, t, 0.7, 5);
                    b.extend(sentence(rng, u, 0.7, 5));
                    (sentence(rng, t, 0.7, 10), b, rng.random_range(0.35..0.65))
                }
                Regime::Dissim => (
                    sentence(rng, t, 0.7, 10),
                    sentence(rng, u, 0.7, 10),
                    rng.random_range(0.0..0.3),
                ),
            };
            out.push(PairRecord {
                sentence_a: render(&a),
                sentence_b: render(&b),
                score,
                regime,
            });
        }
    }
    out
}

/// Ids used for the two sides of pair `k`.
pub fn pair_ids(k: usize) -> (String, String) {
    (format!("pair{k:03}:a"), format!("pair{k:03}:b"))
}

/// Teacher vectors with `cos(t_a, t_b) == score` for every pair, built on
/// disjoint orthonormal coordinate pairs. Needs `2 · pairs ≤ dim`.
pub fn planted_teacher(pairs: &[PairRecord], dim: usize) -> HashMap<String, Vec<f64>> {
    assert!(
        2 * pairs.len() <= dim,
        "planted teacher needs 2 coordinates per pair"
    );
    let mut out = HashMap::new();
    for (k, p) in pairs.iter().enumerate() {
        let (ia, ib) = pair_ids(k);
        let mut a = vec![0.0; dim];
        a[2 * k] = 1.0;
        let mut b = vec![0.0; dim];
        b[2 * k] = p.score;
        b[2 * k + 1] = (1.0 - p.score * p.score).max(0.0).sqrt();
        out.insert(ia, a);
        out.insert(ib, b);
    }
    out
}

pub fn random_unit_vectors(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            if normalize_in_place(&mut v).is_some() {
                break v;
            }
        })
        .collect()
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Pairs `(e, e)` for the identity-recovery check.
pub fn identity_pairs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    random_unit_vectors(n, dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Inputs `e` and targets `Q e` for a random orthogonal `Q`.
pub fn orthogonal_pairs(
    n: usize,
    dim: usize,
    seed: u64,
) -> (DMatrix<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(dim, &mut rng);
    let inputs = random_unit_vectors(n, dim, &mut rng);
    let targets = inputs
        .iter()
        .map(|e| {
            let v = &q * nalgebra::DVector::from_column_slice(e);
            v.as_slice().to_vec()
        })
        .collect();
    (q, inputs, targets)
}

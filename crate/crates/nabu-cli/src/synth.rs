//! Synthetic corpus generator: templated facts about invented entities in
//! three languages, up to 7 triples per graph. CI and the acceptance suite
//! run on this corpus; real WebNLG exports go through `prepare --raw`
//! instead.

use nabu_core::graph::Triple;
use nabu_core::rng::stream;
use nabu_core::LanguageTag;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::CorpusBlock;

/// (label, english surface, german surface, russian surface)
const ENTITIES: [(&str, &str, &str, &str); 18] = [
    ("Alderon", "alderon", "alderon", "алдерон"),
    ("Veloria", "veloria", "veloria", "велория"),
    ("Branthe", "branthe", "branthe", "бранте"),
    ("Corvale", "corvale", "corvale", "корвале"),
    ("Dymmet", "dymmet", "dymmet", "дюммет"),
    ("Esperia", "esperia", "esperia", "эсперия"),
    ("Farlow", "farlow", "farlow", "фарлоу"),
    ("Gildenhall", "gildenhall", "gildenhall", "гильденхолл"),
    ("Hastoria", "hastoria", "hastoria", "хастория"),
    ("Iselle", "iselle", "iselle", "изелле"),
    ("Mira_Solen", "mira solen", "mira solen", "мира солен"),
    ("Tomas_Brell", "tomas brell", "tomas brell", "томас брелл"),
    ("Ira_Vantel", "ira vantel", "ira vantel", "ира вантель"),
    ("Olen_Reva", "olen reva", "olen reva", "олен рева"),
    ("Kavo_Pie", "kavo pie", "kavo pie", "каво пай"),
    ("Suld_Bread", "suld bread", "suld brot", "сульд хлеб"),
    ("Norvale_Lake", "norvale lake", "norvale see", "норвале озеро"),
    ("Quin_Tower", "quin tower", "quin turm", "куин башня"),
];

/// (predicate, english template, german template, russian template)
const PREDICATES: [(&str, &str, &str, &str); 7] = [
    ("locatedIn", "{s} is located in {o}", "{s} liegt in {o}", "{s} находится в {o}"),
    (
        "capitalOf",
        "{s} is the capital of {o}",
        "{s} ist die hauptstadt von {o}",
        "{s} является столицей {o}",
    ),
    (
        "leaderName",
        "the leader of {s} is {o}",
        "der anführer von {s} ist {o}",
        "лидером {s} является {o}",
    ),
    ("borderedBy", "{s} is bordered by {o}", "{s} grenzt an {o}", "{s} граничит с {o}"),
    (
        "knownFor",
        "{s} is known for {o}",
        "{s} ist bekannt für {o}",
        "{s} известен благодаря {o}",
    ),
    (
        "foundedBy",
        "{s} was founded by {o}",
        "{s} wurde von {o} gegründet",
        "{s} был основан {o}",
    ),
    ("partOf", "{s} is part of {o}", "{s} ist teil von {o}", "{s} является частью {o}"),
];

fn entity_surface(label: &str, lang: LanguageTag) -> String {
    match ENTITIES.iter().find(|(l, ..)| *l == label) {
        Some((_, eng, ger, rus)) => match lang {
            LanguageTag::Eng => (*eng).to_string(),
            LanguageTag::Ger => (*ger).to_string(),
            LanguageTag::Rus => (*rus).to_string(),
        },
        None => label.replace('_', " ").to_lowercase(),
    }
}

fn clause(triple: &Triple, lang: LanguageTag) -> String {
    let template = PREDICATES
        .iter()
        .find(|(p, ..)| *p == triple.predicate)
        .map(|(_, eng, ger, rus)| match lang {
            LanguageTag::Eng => *eng,
            LanguageTag::Ger => *ger,
            LanguageTag::Rus => *rus,
        })
        .unwrap_or("{s} {o}");
    template
        .replace("{s}", &entity_surface(&triple.subject, lang))
        .replace("{o}", &entity_surface(&triple.object, lang))
}

/// The deterministic reference sentence for a triple set in one language.
pub fn reference_for(triples: &[Triple], lang: LanguageTag) -> String {
    let joiner = match lang {
        LanguageTag::Eng => " and ",
        LanguageTag::Ger => " und ",
        LanguageTag::Rus => " и ",
    };
    triples
        .iter()
        .map(|t| clause(t, lang))
        .collect::<Vec<_>>()
        .join(joiner)
}

/// Graph sizes for a corpus of `count` graphs: mostly small sets, with the
/// full range up to 7 triples represented.
fn graph_sizes(count: usize) -> Vec<usize> {
    let quota = [
        (1usize, 30usize),
        (2, 30),
        (3, 20),
        (4, 8),
        (5, 6),
        (6, 4),
        (7, 2),
    ];
    let mut sizes = Vec::with_capacity(count);
    'outer: loop {
        for (size, percent) in quota {
            let n = (count * percent).div_ceil(100);
            for _ in 0..n {
                sizes.push(size);
                if sizes.len() == count {
                    break 'outer;
                }
            }
        }
    }
    sizes
}

/// Generates `count` triple sets. Each graph has a root subject; later
/// triples may hang off earlier objects, and predicates may repeat across
/// subjects (exercising predicate-node disambiguation).
pub fn synth_graphs(count: usize, seed: u64) -> Vec<Vec<Triple>> {
    let mut rng = stream(seed, "synth", 0);
    graph_sizes(count)
        .into_iter()
        .map(|size| {
            let mut triples: Vec<Triple> = Vec::with_capacity(size);
            let root = ENTITIES[rng.gen_range(0..ENTITIES.len())].0;
            let mut subjects = vec![root.to_string()];
            while triples.len() < size {
                let subject = if triples.is_empty() || rng.gen_range(0.0..1.0) < 0.7 {
                    subjects[0].clone()
                } else {
                    subjects[rng.gen_range(0..subjects.len())].clone()
                };
                let predicate = PREDICATES[rng.gen_range(0..PREDICATES.len())].0;
                let object = ENTITIES[rng.gen_range(0..ENTITIES.len())].0;
                if object == subject {
                    continue;
                }
                // One object per (subject, predicate) keeps references clean.
                if triples
                    .iter()
                    .any(|t| t.subject == subject && t.predicate == predicate)
                {
                    continue;
                }
                if !subjects.contains(&object.to_string()) {
                    subjects.push(object.to_string());
                }
                triples.push(Triple {
                    subject,
                    predicate: predicate.to_string(),
                    object: object.to_string(),
                });
            }
            triples
        })
        .collect()
}

/// The full synthetic corpus: every graph paired with its reference in
/// every requested language, grouped per language.
pub fn synthesize(
    languages: &[LanguageTag],
    count: usize,
    seed: u64,
) -> Vec<(LanguageTag, Vec<CorpusBlock>)> {
    let graphs = synth_graphs(count, seed);
    languages
        .iter()
        .map(|&lang| {
            let blocks = graphs
                .iter()
                .map(|triples| CorpusBlock {
                    lang,
                    triples: triples.clone(),
                    text: Some(reference_for(triples, lang)),
                })
                .collect();
            (lang, blocks)
        })
        .collect()
}

/// Text lines for tokenizer training: references plus the feature tokens of
/// every label, so node embeddings never fall back to UNK pieces.
pub fn tokenizer_lines(blocks: &[CorpusBlock]) -> Vec<String> {
    let mut lines = Vec::new();
    for block in blocks {
        if let Some(text) = &block.text {
            lines.push(text.clone());
        }
        let mut labels: Vec<String> = Vec::new();
        for t in &block.triples {
            labels.extend(nabu_core::graph::split_entity_label(&t.subject));
            labels.extend(nabu_core::graph::split_camel_case(&t.predicate));
            labels.extend(nabu_core::graph::split_entity_label(&t.object));
        }
        if !labels.is_empty() {
            lines.push(labels.join(" "));
        }
    }
    lines
}

/// Seeded shuffle used for the merged multilingual train file.
pub fn shuffle_blocks(blocks: &mut Vec<CorpusBlock>, seed: u64) {
    blocks.shuffle(&mut stream(seed, "merged-shuffle", 0));
}

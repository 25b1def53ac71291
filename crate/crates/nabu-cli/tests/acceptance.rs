//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers. The three full training runs (graph encoder twice
//! for determinism, linearized baseline once) are shared across criteria
//! through lazy fixtures.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nabu_cli::corpus::read_corpus;
use nabu_cli::manifest::sha256_file;
use nabu_cli::pipeline::{self, GenerateOpts};
use nabu_core::config::{EncoderKind, ModelConfig, RunConfig, SessionConfig};
use nabu_core::decoding::{apply_copy, beam_search, Hypothesis, Scorer};
use nabu_core::graph::{parse_triples, reify, LanguageTag, PredicateNodes, Relation, Triple};
use nabu_core::metrics;
use nabu_core::model::{init_store, teacher_forced};
use nabu_core::params::{Binder, ParameterStore};
use nabu_core::rng::stream;
use nabu_core::tensor::{gradcheck, Tape, Tensor, TensorError};

/// Finer step than the unit tests': layer norm's curvature needs it for
/// the numeric side of the check to be accurate at the 1e-4 tolerance.
const FD_STEP: f64 = 1e-4;
use nabu_core::tokenizer::{train_bpe, UNK};
use nabu_core::transformer;

// ---------------------------------------------------------------------
// Shared desk-scale training fixtures
// ---------------------------------------------------------------------

const DESK_SEED: u64 = 2026;
const GRAPHS: usize = 50;

fn desk_config(encoder: &str) -> RunConfig {
    let text = format!(
        "embed_dim=64\nhidden_dim=64\nvocab_size=800\nheads=2\nlayers=2\nffn_dim=256\ndropout=0\n\
         max_decode_len=48\nbeam_size=5\nlength_norm=0.6\ncopy=true\nattention=gat\n\
         predicate_nodes=occurrence-indexed\nedge_aggregation=mean\nencoder={encoder}\nprecision=f64\n\
         languages=ENG,GER,RUS\ntask=multi\nbatch_size=32\nlr=0.001\nepochs=300\nseed={DESK_SEED}\n\
         grad_clip=1.0\nlr_schedule=constant\nearly_stop_loss=0.005\nk_fold=10\n"
    );
    RunConfig::parse(&text).unwrap()
}

struct TrainRun {
    _dir: tempfile::TempDir,
    data: PathBuf,
    checkpoint: PathBuf,
    vocab: PathBuf,
    epochs_run: usize,
    pipeline_wall: Duration,
    /// Per language: (hypotheses decoded from its train split, references).
    outputs: BTreeMap<&'static str, (Vec<String>, Vec<String>)>,
    /// Hypotheses from decoding the ENG graphs with each language override.
    switched: BTreeMap<&'static str, Vec<String>>,
    checkpoint_hash: String,
    generation_hash: String,
}

fn lang_code(lang: LanguageTag) -> &'static str {
    match lang {
        LanguageTag::Eng => "eng",
        LanguageTag::Ger => "ger",
        LanguageTag::Rus => "rus",
    }
}

fn execute_run(encoder: &str) -> TrainRun {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_path_buf();
    let cfg = desk_config(encoder);
    let data = out.join("data");
    let start = Instant::now();

    pipeline::prepare(None, Some(GRAPHS), &data, &cfg).unwrap();
    let corpus_files: Vec<PathBuf> = LanguageTag::ALL
        .iter()
        .map(|&l| data.join(format!("{}.train.nabu", lang_code(l))))
        .collect();
    let vocab = out.join("vocab.txt");
    pipeline::train_tokenizer(&corpus_files, 800, &vocab, DESK_SEED).unwrap();

    let checkpoint = out.join("model.ckpt");
    let report = pipeline::train(&cfg, &data, &vocab, &checkpoint, &out.join("train.log.csv"))
        .unwrap();

    let mut outputs = BTreeMap::new();
    let mut generation_bytes: Vec<u8> = Vec::new();
    for &lang in &LanguageTag::ALL {
        let code = lang_code(lang);
        let input = data.join(format!("{code}.train.nabu"));
        let hyp_path = out.join(format!("{code}.hyp.txt"));
        let opts = GenerateOpts {
            lang_override: None,
            jsonl: false,
            dump_attention: None,
        };
        pipeline::generate(&checkpoint, &vocab, &input, &hyp_path, &opts).unwrap();
        let hyps: Vec<String> = std::fs::read_to_string(&hyp_path)
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect();
        generation_bytes.extend(std::fs::read(&hyp_path).unwrap());
        let refs: Vec<String> = read_corpus(&input)
            .unwrap()
            .into_iter()
            .map(|b| b.text.unwrap())
            .collect();
        outputs.insert(code, (hyps, refs));
    }

    // Language-token switching: decode the ENG graphs with each override.
    let mut switched = BTreeMap::new();
    for &lang in &LanguageTag::ALL {
        let code = lang_code(lang);
        let hyp_path = out.join(format!("switched.{code}.txt"));
        let opts = GenerateOpts {
            lang_override: Some(lang),
            jsonl: false,
            dump_attention: None,
        };
        pipeline::generate(
            &checkpoint,
            &vocab,
            &data.join("eng.train.nabu"),
            &hyp_path,
            &opts,
        )
        .unwrap();
        let hyps: Vec<String> = std::fs::read_to_string(&hyp_path)
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect();
        generation_bytes.extend(std::fs::read(&hyp_path).unwrap());
        switched.insert(code, hyps);
    }

    let pipeline_wall = start.elapsed();
    use sha2::Digest;
    let generation_hash = format!("{:x}", sha2::Sha256::digest(&generation_bytes));

    TrainRun {
        data,
        checkpoint: checkpoint.clone(),
        vocab,
        epochs_run: report.epochs_run,
        pipeline_wall,
        outputs,
        switched,
        checkpoint_hash: sha256_file(&checkpoint).unwrap(),
        generation_hash,
        _dir: dir,
    }
}

fn gat_run() -> &'static TrainRun {
    static RUN: OnceLock<TrainRun> = OnceLock::new();
    RUN.get_or_init(|| execute_run("gat"))
}

fn gat_rerun() -> &'static TrainRun {
    static RUN: OnceLock<TrainRun> = OnceLock::new();
    RUN.get_or_init(|| execute_run("gat"))
}

fn baseline_run() -> &'static TrainRun {
    static RUN: OnceLock<TrainRun> = OnceLock::new();
    RUN.get_or_init(|| execute_run("linearized-transformer"))
}

fn corpus_bleu(run: &TrainRun) -> f64 {
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (hyp, reference) in run.outputs.values() {
        hyps.extend(hyp.iter().cloned());
        refs.extend(reference.iter().map(|r| vec![r.clone()]));
    }
    metrics::bleu(&hyps, &refs).unwrap().score
}

// ---------------------------------------------------------------------
// Criterion 1: gradient correctness
// ---------------------------------------------------------------------

/// Central-difference check of every parameter element against the
/// tape-collected gradients of a scalar loss over the store.
fn store_grad_err<F>(store: &ParameterStore<f64>, loss: F) -> f64
where
    F: Fn(&ParameterStore<f64>, &mut Tape<f64>, &mut Binder<f64>) -> Tensor<f64>,
{
    let mut tape = Tape::new();
    let mut binder = Binder::new();
    let out = loss(store, &mut tape, &mut binder);
    let mut grads = tape.backward(&out).unwrap();
    let named = binder.grads(&mut grads);

    let eval = |store: &ParameterStore<f64>| -> f64 {
        let mut tape = Tape::inference();
        let mut binder = Binder::new();
        loss(store, &mut tape, &mut binder).item()
    };

    let mut worst = 0.0f64;
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let len = store.get(&name).unwrap().len();
        for elem in 0..len {
            let mut plus = store.clone();
            plus.get_mut(&name).unwrap().data_mut()[elem] += FD_STEP;
            let mut minus = store.clone();
            minus.get_mut(&name).unwrap().data_mut()[elem] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let analytic = named.get(&name).map_or(0.0, |g| g.data()[elem]);
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    worst
}

fn tiny_session(encoder: EncoderKind) -> SessionConfig {
    SessionConfig::new(
        ModelConfig {
            embed_dim: 8,
            hidden_dim: 8,
            vocab_size: 48,
            heads: 2,
            layers: 1,
            ffn_dim: 8,
            dropout: 0.0,
            max_decode_len: 8,
            ..ModelConfig::default()
        },
        encoder,
        vec![LanguageTag::Eng, LanguageTag::Ger, LanguageTag::Rus],
    )
}

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    const TOL: f64 = 1e-4;
    let mut worst_op = 0.0f64;

    // Per-operation checks, dims ≤ 8, 5 seeds.
    for seed in 0..5u64 {
        let mut rng = stream(seed, "acceptance-grad", 0);
        let rand = |shape: &[usize], rng: &mut nabu_core::rng::ChaCha8Rng| {
            Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
        };

        let cases: Vec<(&str, Box<dyn Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>>, Vec<Tensor<f64>>)> = {
            let w_mat = rand(&[3, 2], &mut rng);
            let w_sm = rand(&[2, 5], &mut rng);
            let w_ln = rand(&[3, 4], &mut rng);
            let w_act = rand(&[2, 6], &mut rng);
            let w_gr = rand(&[4, 3], &mut rng);
            let w_seg = rand(&[3, 3], &mut rng);
            let w_ss = rand(&[6], &mut rng);
            let w_cc = rand(&[3, 6], &mut rng);
            let w_cs = rand(&[3, 2], &mut rng);
            let w_tr = rand(&[3, 4], &mut rng);
            let w_ar = rand(&[3, 4], &mut rng);
            let w_dr = rand(&[3, 4], &mut rng);
            vec![
                ("matmul", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let y = t.matmul(&xs[0], &xs[1])?;
                    t.weighted_sum(&y, &w_mat)
                }) as Box<_>, vec![rand(&[3, 4], &mut rng), rand(&[4, 2], &mut rng)]),
                ("softmax", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let y = t.softmax_rows(&xs[0])?;
                    t.weighted_sum(&y, &w_sm)
                }), vec![rand(&[2, 5], &mut rng)]),
                ("log_softmax", {
                    let w = rand(&[2, 5], &mut rng);
                    Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                        let y = t.log_softmax_rows(&xs[0])?;
                        t.weighted_sum(&y, &w)
                    })
                }, vec![rand(&[2, 5], &mut rng)]),
                ("layer_norm", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let y = t.layer_norm(&xs[0], &xs[1], &xs[2])?;
                    t.weighted_sum(&y, &w_ln)
                }), vec![rand(&[3, 4], &mut rng), rand(&[4], &mut rng), rand(&[4], &mut rng)]),
                ("activations", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let a = t.relu(&xs[0]);
                    let b = t.leaky_relu(&a, 0.2);
                    let c = t.elu(&b);
                    t.weighted_sum(&c, &w_act)
                }), vec![rand(&[2, 6], &mut rng)]),
                ("gather_rows", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let y = t.gather_rows(&xs[0], &[0, 2, 2, 4])?;
                    t.weighted_sum(&y, &w_gr)
                }), vec![rand(&[5, 3], &mut rng)]),
                ("segment_mean", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let y = t.segment_mean_rows(&xs[0], &[0, 1, 1, 2, 0], 3)?;
                    t.weighted_sum(&y, &w_seg)
                }), vec![rand(&[5, 3], &mut rng)]),
                ("segment_softmax_scale_sum", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let alpha = t.segment_softmax(&xs[0], &[0, 0, 1, 1, 1, 2], 3)?;
                    let scaled = t.scale_rows(&xs[1], &alpha)?;
                    let y = t.segment_sum_rows(&scaled, &[0, 0, 1, 1, 1, 2], 3)?;
                    let flat = t.gather(&xs[0], &[0, 1, 2, 3, 4, 5])?;
                    let a = t.weighted_sum(&y, &{
                        let mut r = stream(7, "w", 3);
                        Tensor::uniform(vec![3, 2], -1.0, 1.0, &mut r)
                    })?;
                    let b = t.weighted_sum(&flat, &w_ss)?;
                    t.add(&a, &b)
                }), vec![rand(&[6], &mut rng), rand(&[6, 2], &mut rng)]),
                ("concat_cols", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let y = t.concat_cols(&xs[0], &xs[1])?;
                    t.weighted_sum(&y, &w_cc)
                }), vec![rand(&[3, 2], &mut rng), rand(&[3, 4], &mut rng)]),
                ("col_slice", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let y = t.col_slice(&xs[0], 2, 4)?;
                    t.weighted_sum(&y, &w_cs)
                }), vec![rand(&[3, 6], &mut rng)]),
                ("transpose", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let y = t.transpose(&xs[0]);
                    t.weighted_sum(&y, &w_tr)
                }), vec![rand(&[4, 3], &mut rng)]),
                ("add_row_scale", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    let y = t.add_row(&xs[0], &xs[1])?;
                    let z = t.scale(&y, 1.7);
                    t.weighted_sum(&z, &w_ar)
                }), vec![rand(&[3, 4], &mut rng), rand(&[4], &mut rng)]),
                ("cross_entropy", Box::new(|t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    t.cross_entropy_sum(&xs[0], &[1, 0, 3, 2], 0)
                }), vec![rand(&[4, 5], &mut rng)]),
                ("dropout", Box::new(move |t: &mut Tape<f64>, xs: &[Tensor<f64>]| {
                    // Fresh stream per call: the mask is identical across
                    // the finite-difference evaluations.
                    let mut mask_rng = stream(40, "acc-dropout", 0);
                    let y = t.dropout(&xs[0], 0.4, &mut mask_rng);
                    t.weighted_sum(&y, &w_dr)
                }), vec![rand(&[3, 4], &mut rng)]),
            ]
        };
        for (name, f, inputs) in cases {
            let err = gradcheck::max_rel_err_eps(&inputs, 1e-4, |t, xs| f(t, xs)).unwrap();
            assert!(err < TOL, "op {name} seed {seed}: err {err}");
            worst_op = worst_op.max(err);
        }
    }

    // Both full architectures: loss gradients w.r.t. every parameter.
    let vocab = train_bpe(["a b c d e ab cd"], 48).unwrap();
    let triples = parse_triples("A | ab | B\nB | cd | C").unwrap();
    let mut worst_arch = 0.0f64;
    for seed in 0..5u64 {
        for encoder in [EncoderKind::Gat, EncoderKind::LinearizedTransformer] {
            let session = tiny_session(encoder);
            let store: ParameterStore<f64> = init_store(&session, seed);
            let graph = reify(
                &triples,
                LanguageTag::Eng,
                session.model.predicate_nodes,
            )
            .unwrap();
            let mut target = vec![nabu_core::tokenizer::BOS];
            target.extend(vocab.encode("ab cd e"));
            target.push(nabu_core::tokenizer::EOS);
            let session_ref = &session;
            let vocab_ref = &vocab;
            let graph_ref = &graph;
            let target_ref = &target;
            let err = store_grad_err(&store, move |store, tape, binder| {
                let mut rng = stream(0, "no-dropout", 0);
                teacher_forced(
                    tape, binder, store, vocab_ref, graph_ref, target_ref, session_ref, 0.0,
                    &mut rng,
                )
                .unwrap()
                .loss
            });
            assert!(err < TOL, "{encoder:?} seed {seed}: err {err}");
            worst_arch = worst_arch.max(err);
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "gradient suite took {elapsed:?}");
    println!(
        "criterion 1 PASS: per-op max rel err {worst_op:.2e}, architecture max rel err {worst_arch:.2e}, suite {elapsed:.2?}"
    );
}

// ---------------------------------------------------------------------
// Criterion 2: reification
// ---------------------------------------------------------------------

#[test]
fn criterion_2_reification() {
    use rand::Rng;
    let mut rng = stream(77, "acceptance-reify", 0);
    for case in 0..1000u32 {
        let n = rng.gen_range(1..8);
        let triples: Vec<Triple> = (0..n)
            .map(|_| Triple {
                subject: format!("e{}", rng.gen_range(0..6)),
                predicate: format!("p{}", rng.gen_range(0..4)),
                object: format!("e{}", rng.gen_range(0..6)),
            })
            .collect();
        let graph = reify(&triples, LanguageTag::Rus, PredicateNodes::OccurrenceIndexed).unwrap();
        let a0 = graph.edges.iter().filter(|e| e.1 == Relation::A0).count();
        let a1 = graph.edges.iter().filter(|e| e.1 == Relation::A1).count();
        assert_eq!(a0, triples.len(), "case {case}");
        assert_eq!(a1, triples.len(), "case {case}");
        let mut subjects: Vec<&str> = triples.iter().map(|t| t.subject.as_str()).collect();
        subjects.sort_unstable();
        subjects.dedup();
        assert_eq!(
            graph.edges.len(),
            2 * triples.len() + subjects.len(),
            "case {case}"
        );
    }

    // The worked single-triple example reproduces the exact topology.
    let graph = reify(
        &parse_triples("Albert_Einstein | birthPlace | Germany").unwrap(),
        LanguageTag::Eng,
        PredicateNodes::OccurrenceIndexed,
    )
    .unwrap();
    assert_eq!(
        graph.nodes,
        vec!["ENG", "Albert_Einstein", "birthPlace#0", "Germany"]
    );
    assert_eq!(
        graph.edges,
        vec![
            (1, Relation::A0, 2),
            (2, Relation::A1, 3),
            (0, Relation::Lang, 1),
        ]
    );
    println!("criterion 2 PASS: 1000 random triple sets + worked-example topology");
}

// ---------------------------------------------------------------------
// Criterion 3: attention normalization
// ---------------------------------------------------------------------

#[test]
fn criterion_3_attention_normalization() {
    use rand::Rng;
    let session = tiny_session(EncoderKind::Gat);
    let store: ParameterStore<f64> = init_store(&session, 5);
    let vocab = train_bpe(["e0 e1 e2 e3 e4 e5 p0 p1 p2 p3"], 48).unwrap();

    let mut rng = stream(6, "acceptance-attn", 0);
    let mut rows_checked = 0usize;
    for _ in 0..40 {
        let n = rng.gen_range(1..8);
        let triples: Vec<Triple> = (0..n)
            .map(|_| Triple {
                subject: format!("e{}", rng.gen_range(0..6)),
                predicate: format!("p{}", rng.gen_range(0..4)),
                object: format!("e{}", rng.gen_range(0..6)),
            })
            .collect();
        let graph = reify(&triples, LanguageTag::Eng, PredicateNodes::OccurrenceIndexed).unwrap();
        let mut tape = Tape::inference();
        let mut binder = Binder::new();
        let mut drop_rng = stream(1, "d", 0);
        let out = nabu_core::gat::encode(
            &mut tape,
            &mut binder,
            &store,
            &vocab,
            &graph,
            &session.model,
            0.0,
            &mut drop_rng,
        )
        .unwrap();
        for coeff in &out.attention {
            for head in 0..session.model.heads {
                for sum in coeff.row_sums(head, graph.node_count()) {
                    assert!((sum - 1.0).abs() < 1e-5, "gat row sum {sum}");
                    rows_checked += 1;
                }
            }
        }
    }

    // Decoder self- and cross-attention rows over random memories.
    for seed in 0..10u64 {
        let memory = Tensor::uniform(vec![5, 8], -1.0, 1.0, &mut stream(seed, "mem", 0));
        let mut tape = Tape::inference();
        let mut drop_rng = stream(seed, "d", 1);
        let out = transformer::decoder_forward(
            &mut tape,
            None,
            &store,
            &memory,
            &[1, 4, 9, 11],
            &session.model,
            0.0,
            &mut drop_rng,
        )
        .unwrap();
        for trace in &out.traces {
            for row in &trace.rows {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-5, "{}: {sum}", trace.label);
                rows_checked += 1;
            }
        }
        for row in &out.cross_attention {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
            rows_checked += 1;
        }
    }
    println!("criterion 3 PASS: {rows_checked} attention rows sum to 1 ± 1e-5");
}

// ---------------------------------------------------------------------
// Criterion 4: decoding
// ---------------------------------------------------------------------

struct TableScorer {
    steps: Vec<[f64; 3]>,
}

impl Scorer<f64> for TableScorer {
    type State = usize;

    fn start(&self) -> Result<usize, TensorError> {
        Ok(0)
    }

    fn step(&self, state: &mut usize, _token: u32) -> Result<(Vec<f64>, Vec<f64>), TensorError> {
        let probs = self.steps[(*state).min(self.steps.len() - 1)];
        *state += 1;
        Ok((probs.iter().map(|p| p.ln()).collect(), vec![1.0]))
    }
}

#[test]
fn criterion_4_decoding() {
    const EOS: u32 = 0;
    const BOS: u32 = 99;
    let scorer = TableScorer {
        steps: vec![[0.02, 0.9, 0.08], [0.5, 0.4, 0.1], [0.9, 0.05, 0.05]],
    };

    // beam = 1 is exactly greedy.
    let beam1 = beam_search(&scorer, 1, 3, 0.6, BOS, EOS).unwrap();
    let mut greedy = Vec::new();
    let mut state = scorer.start().unwrap();
    loop {
        let consume = greedy.last().copied().unwrap_or(BOS);
        let (lp, _) = scorer.step(&mut state, consume).unwrap();
        let best = lp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap()
            .0 as u32;
        greedy.push(best);
        if best == EOS || greedy.len() == 3 {
            break;
        }
    }
    assert_eq!(beam1[0].tokens, greedy);

    // beam = 2 equals exhaustive enumeration over all length ≤ 3 sequences.
    let mut all: Vec<(Vec<u32>, f64)> = Vec::new();
    fn expand(steps: &[[f64; 3]], prefix: Vec<u32>, lp: f64, all: &mut Vec<(Vec<u32>, f64)>) {
        let depth = prefix.len();
        if depth == 3 {
            all.push((prefix, lp));
            return;
        }
        let probs = steps[depth.min(steps.len() - 1)];
        let mut ended = prefix.clone();
        ended.push(EOS);
        all.push((ended, lp + probs[0].ln()));
        for token in 1..3u32 {
            let mut next = prefix.clone();
            next.push(token);
            expand(steps, next, lp + probs[token as usize].ln(), all);
        }
    }
    expand(&scorer.steps, Vec::new(), 0.0, &mut all);
    all.sort_by(|a, b| {
        let sa = a.1 / (a.0.len() as f64).powf(0.6);
        let sb = b.1 / (b.0.len() as f64).powf(0.6);
        sb.partial_cmp(&sa).unwrap().then(a.0.cmp(&b.0))
    });
    let oracle: Vec<Vec<u32>> = all.into_iter().take(2).map(|(s, _)| s).collect();
    let beam2: Vec<Vec<u32>> = beam_search(&scorer, 2, 3, 0.6, BOS, EOS)
        .unwrap()
        .iter()
        .map(|h| h.tokens.clone())
        .collect();
    assert_eq!(beam2, oracle);

    // One-hot attention drives the copy mechanism to exactly that node.
    let graph = reify(
        &parse_triples("Visvesvaraya_Technological_University | city | Belgaum").unwrap(),
        LanguageTag::Eng,
        PredicateNodes::OccurrenceIndexed,
    )
    .unwrap();
    let vocab = train_bpe(["the of was in"], 48).unwrap();
    let map: Vec<Option<usize>> = (0..graph.node_count()).map(Some).collect();
    for node in 0..graph.node_count() {
        let mut attention = vec![0.0; graph.node_count()];
        attention[node] = 1.0;
        let hyp = Hypothesis {
            tokens: vec![UNK],
            log_prob: -0.1,
            attention: vec![attention],
            finished: true,
        };
        let out = apply_copy(&hyp, &graph, &vocab, &map);
        assert_eq!(out.copies[0].source_node, node);
    }
    println!("criterion 4 PASS: beam1 ≡ greedy, beam2 ≡ enumeration, one-hot copy exact");
}

// ---------------------------------------------------------------------
// Criteria 5, 6, 8: end-to-end memorization, comparison, determinism
// ---------------------------------------------------------------------

#[test]
fn criterion_5_memorization_and_language_switching() {
    let run = gat_run();
    let bleu = corpus_bleu(run);
    assert!(bleu >= 99.0, "training-set BLEU {bleu}");
    assert!(run.epochs_run <= 300, "ran {} epochs", run.epochs_run);
    assert!(
        run.pipeline_wall < Duration::from_secs(600),
        "pipeline took {:?}",
        run.pipeline_wall
    );

    // Switching the language token alone must reproduce the right-language
    // reference for every graph.
    let mut exact = 0usize;
    let mut total = 0usize;
    for &lang in &LanguageTag::ALL {
        let code = lang_code(lang);
        let switched = &run.switched[code];
        let refs = &run.outputs[code].1;
        assert_eq!(switched.len(), refs.len());
        for (hyp, reference) in switched.iter().zip(refs.iter()) {
            total += 1;
            if hyp == reference {
                exact += 1;
            }
        }
    }
    assert_eq!(
        exact, total,
        "language switching must match every reference exactly"
    );
    println!(
        "criterion 5 PASS: training BLEU {bleu:.2}, {total}/{total} language-switched exact matches, {} epochs, wall {:?}",
        run.epochs_run, run.pipeline_wall
    );
}

#[test]
fn criterion_6_controlled_comparison() {
    let gat = gat_run();
    let baseline = baseline_run();
    let gat_bleu = corpus_bleu(gat);
    let baseline_bleu = corpus_bleu(baseline);
    assert!(gat_bleu >= 99.0, "graph encoder BLEU {gat_bleu}");
    assert!(baseline_bleu >= 99.0, "baseline BLEU {baseline_bleu}");
    assert!(baseline.epochs_run <= 300);
    println!(
        "criterion 6 PASS: gat BLEU {gat_bleu:.2} ({} epochs) vs linearized-transformer BLEU {baseline_bleu:.2} ({} epochs) under identical budgets",
        gat.epochs_run, baseline.epochs_run
    );
}

#[test]
fn criterion_8_determinism() {
    let a = gat_run();
    let b = gat_rerun();
    assert_eq!(
        a.checkpoint_hash, b.checkpoint_hash,
        "checkpoints differ between identical seeded runs"
    );
    assert_eq!(
        a.generation_hash, b.generation_hash,
        "generated text differs between identical seeded runs"
    );
    println!(
        "criterion 8 PASS: byte-identical checkpoints ({}) and generations ({})",
        &a.checkpoint_hash[..12],
        &a.generation_hash[..12]
    );
}

// ---------------------------------------------------------------------
// Criterion 7: metrics
// ---------------------------------------------------------------------

/// Naive recount oracle: independent n-gram bookkeeping over slices.
fn naive_bleu(hyps: &[String], refs: &[Vec<String>]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut c = 0usize;
    let mut r = 0usize;
    for (hyp, ref_set) in hyps.iter().zip(refs.iter()) {
        let h = metrics::bleu_tokenize(hyp);
        c += h.len();
        let rt: Vec<Vec<String>> = ref_set.iter().map(|x| metrics::bleu_tokenize(x)).collect();
        let mut best = (usize::MAX, usize::MAX);
        for cand in rt.iter().map(|x| x.len()) {
            let key = ((cand as isize - h.len() as isize).unsigned_abs(), cand);
            if key < best {
                best = key;
            }
        }
        if best.1 != usize::MAX {
            r += best.1;
        }
        for n in 1..=4usize {
            if h.len() < n {
                continue;
            }
            let hyp_grams: Vec<&[String]> = h.windows(n).collect();
            totals[n - 1] += hyp_grams.len();
            let mut seen: Vec<&[String]> = Vec::new();
            for &gram in &hyp_grams {
                if seen.contains(&gram) {
                    continue;
                }
                seen.push(gram);
                let in_hyp = hyp_grams.iter().filter(|&&g| g == gram).count();
                let max_ref = rt
                    .iter()
                    .map(|toks| {
                        if toks.len() < n {
                            0
                        } else {
                            toks.windows(n).filter(|&g| g == gram).count()
                        }
                    })
                    .max()
                    .unwrap_or(0);
                matches[n - 1] += in_hyp.min(max_ref);
            }
        }
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if totals[n] == 0 {
            1.0
        } else if matches[n] == 0 {
            1e-9
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * (log_sum / 4.0).exp()
}

#[test]
fn criterion_7_metrics() {
    use rand::Rng;
    let words = ["the", "cat", "dog", "sat", "ran", "on", "mat", "big", "red"];
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = stream(seed, "acceptance-metrics", 0);
        let sentence = |rng: &mut nabu_core::rng::ChaCha8Rng| {
            let len = rng.gen_range(1..9);
            (0..len)
                .map(|_| words[rng.gen_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let segments = rng.gen_range(1..6);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..segments {
            hyps.push(sentence(&mut rng));
            let n = rng.gen_range(1..3);
            refs.push((0..n).map(|_| sentence(&mut rng)).collect::<Vec<_>>());
        }
        let fast = metrics::bleu(&hyps, &refs).unwrap().score;
        let slow = naive_bleu(&hyps, &refs);
        let diff = (fast - slow).abs();
        assert!(diff < 1e-9, "seed {seed}: {fast} vs {slow}");
        worst = worst.max(diff);
    }

    let identity = metrics::chrfpp(
        &["the same text".to_string()],
        &[vec!["the same text".to_string()]],
    )
    .unwrap()
    .score;
    assert!((identity - 100.0).abs() < 1e-9);
    let disjoint = metrics::chrfpp(&["abc".to_string()], &[vec!["xyz".to_string()]])
        .unwrap()
        .score;
    assert_eq!(disjoint, 0.0);

    let clipped = metrics::bleu(
        &["the the the the".to_string()],
        &[vec!["the cat".to_string()]],
    )
    .unwrap();
    assert!((clipped.precisions[0] - 0.25).abs() < 1e-12);

    println!(
        "criterion 7 PASS: oracle agreement within {worst:.2e}, chrF++ identity 100 / disjoint 0, clipping p1 = 1/4"
    );
}

// ---------------------------------------------------------------------
// Auxiliary: the prepared data and artifacts stay consistent
// ---------------------------------------------------------------------

#[test]
fn artifacts_reload_cleanly() {
    let run = gat_run();
    // Checkpoint loads back under its own embedded session.
    let session = pipeline::checkpoint_session(&run.checkpoint).unwrap();
    assert_eq!(session.model.vocab_size, 800);
    let vocab = pipeline::load_vocab(&run.vocab).unwrap();
    assert!(vocab.size() <= 800);
    // Every split file parses.
    for lang in ["eng", "ger", "rus"] {
        for split in ["train", "dev", "test"] {
            let path: PathBuf = run.data.join(format!("{lang}.{split}.nabu"));
            let blocks = read_corpus(&path).unwrap();
            if split == "train" {
                assert!(blocks.len() >= 38, "{lang} train too small");
            }
        }
    }
}

use super::*;
use crate::corpus::{LanguageTag, QaExample, TaggedSentence};
use crate::synth::{code_switched_corpus, sentiment_examples, Lexicon};

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let en = Lexicon::english_like();
        let hi = Lexicon::hindi_like();
        let p = dir.path();
        write_tagged_jsonl(p.join("corpus.jsonl"), &code_switched_corpus(&[&en, &hi], 30, 1)).unwrap();
        let sa = |n, seed| sentiment_examples(&[&en, &hi], n, "cs", seed);
        write_classification_tsv(p.join("train.tsv"), &sa(24, 2)).unwrap();
        write_classification_tsv(p.join("dev.tsv"), &sa(9, 3)).unwrap();
        write_classification_tsv(p.join("test.tsv"), &sa(9, 4)).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, extra: &str) -> PathBuf {
        let text = format!(
            r#"{{
  "model": {{ "layers": 1, "heads": 2, "d_model": 16, "d_ff": 32, "max_len": 16 }},
  "optimizer": {{ "learning_rate": 0.001, "grad_accum_steps": 1 }},
  "vocabulary": {{ "size": 120 }},
  "datasets": {{
    "corpus": {{ "task": "mlm", "split": "train", "path": "corpus.jsonl" }},
    "train": {{ "task": "sa", "split": "train", "path": "train.tsv" }},
    "dev": {{ "task": "sa", "split": "dev", "path": "dev.tsv" }},
    "test": {{ "task": "sa", "split": "test", "path": "test.tsv" }}
  }},
  "stages": [
    {{ "name": "mlm", "kind": "mlm-pretrain", "tasks": [{{ "train": ["corpus"] }}], "epochs": 1,
       "stopping": {{ "rule": "fixed-epochs", "epochs": 1 }} }},
    {{ "name": "ft", "kind": "fine-tune", "tasks": [{{ "train": ["train"], "dev": "dev", "test": "test" }}], "epochs": 1 }}
  ]{extra}
}}"#
        );
        let path = self.path("config.json");
        fs::write(&path, text).unwrap();
        path
    }
}

#[test]
fn defaults_and_relative_paths() {
    let ws = Workspace::new();
    let loaded = LoadedConfig::from_file(ws.config("")).unwrap();
    assert_eq!(loaded.config.seeds, DEFAULT_SEEDS.to_vec());
    assert_eq!(loaded.config.seeds.len(), 5);
    assert_eq!(loaded.config.workers, 1);
    assert_eq!(loaded.config.stages[1].batch_size, 8);
    assert_eq!(loaded.output_dir(), ws.path("output"));
    let pipeline = loaded.pipeline().unwrap();
    assert_eq!(pipeline.model.vocab_size, pipeline.vocab.len());
    assert_eq!(pipeline.model.num_labels, 3);
    assert_eq!(pipeline.stages[0].masking, MaskingPolicy::standard());
}

#[test]
fn field_naming_diagnostics() {
    let ws = Workspace::new();
    let cases = [
        (r#", "seeds": "many""#, "seeds"),
        (r#", "mixture": { "limt": 3 }"#, "mixture.limt"),
        (r#", "masking": { "kind": "everything" }"#, "masking.kind"),
    ];
    for (extra, field) in cases {
        let err = LoadedConfig::from_file(ws.config(extra)).unwrap_err();
        match &err {
            Error::Config { field: f, .. } => assert_eq!(f, field),
            other => panic!("expected a config error, got {other}"),
        }
        assert_eq!(exit_code(&err), 2);
        assert_eq!(err.to_string().lines().count(), 1);
    }
}

#[test]
fn missing_files_and_references() {
    let ws = Workspace::new();
    fs::remove_file(ws.path("dev.tsv")).unwrap();
    let err = LoadedConfig::from_file(ws.config("")).unwrap_err();
    assert_eq!(exit_code(&err), 2);
    assert!(err.to_string().contains("datasets.dev.path"));

    let ws = Workspace::new();
    let text = fs::read_to_string(ws.config("")).unwrap().replace(r#""dev": "dev""#, r#""dev": "nope""#);
    let err = LoadedConfig::from_json(&text, ws.dir.path()).unwrap_err();
    assert!(matches!(&err, Error::Config { field, .. } if field == "stages[1].tasks[0].dev"));
}

#[test]
fn digest_tracks_config_and_data_but_not_output_location() {
    let ws = Workspace::new();
    let a = LoadedConfig::from_file(ws.config("")).unwrap();
    let before = a.digest().unwrap();
    let b = LoadedConfig::from_file(ws.config(r#", "output_dir": "elsewhere", "workers": 4, "seeds": [1]"#)).unwrap();
    assert_eq!(before, b.digest().unwrap());
    let c = LoadedConfig::from_file(ws.config(r#", "mixture": { "limit": 5 }"#)).unwrap();
    assert_ne!(before, c.digest().unwrap());
    fs::write(ws.path("test.tsv"), "x y\t\tneutral\ten\n").unwrap();
    assert_ne!(before, a.digest().unwrap());
}

#[test]
fn flags_override_config() {
    let ws = Workspace::new();
    let config = ws.config(r#", "seeds": [9, 10, 11]"#);
    let out = ws.path("run");
    let outcome = run_experiment(&RunArgs {
        config,
        seeds: Some(vec![3, 4]),
        output_dir: Some(out.clone()),
        workers: Some(2),
    })
    .unwrap();
    assert_eq!(outcome.run.report.per_seed.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![3, 4]);
    assert_eq!(outcome.run.report.workers, 2);
    for name in ["report.json", "train_log.jsonl", "plan.jsonl", "checkpoints/seed-3.json", "checkpoints/seed-4.json"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert!(text.contains(&outcome.pipeline.config_digest), "{name} lacks the digest");
    }
}

#[test]
fn train_then_evaluate_round_trip() {
    let ws = Workspace::new();
    let config = ws.config("");
    let report = train(&TrainArgs {
        config: config.clone(),
        seed: Some(5),
        output_dir: Some(ws.path("t")),
    })
    .unwrap();
    let eval = evaluate(&EvaluateArgs {
        config: config.clone(),
        checkpoint: ws.path("t/checkpoints/seed-5.json"),
        split: SplitArg::Test,
    })
    .unwrap();
    assert_eq!(eval.score, report.per_seed[0].score);
    assert_eq!(eval.metric, "weighted-f1");

    // a checkpoint from another config is refused
    let other = ws.config(r#", "mixture": { "limit": 5 }"#);
    let err = evaluate(&EvaluateArgs {
        config: other,
        checkpoint: ws.path("t/checkpoints/seed-5.json"),
        split: SplitArg::Dev,
    })
    .unwrap_err();
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn mask_dump_on_monolingual_corpus_skips_everything() {
    let ws = Workspace::new();
    let mono: Vec<TaggedSentence> = (0..12)
        .map(|i| TaggedSentence::from_parts(&["ba", "de", "ki"][..1 + i % 3], &vec!["en"; 1 + i % 3]).unwrap())
        .collect();
    write_tagged_jsonl(ws.path("mono.jsonl"), &mono).unwrap();
    let summary = mask_dump(&MaskDumpArgs {
        corpus: ws.path("mono.jsonl"),
        vocab: None,
        vocab_size: Some(40),
        policy: PolicyArg::SwitchBoundary,
        select_rate: 0.15,
        whole_word: false,
        max_len: 16,
        seed: 0,
        output_dir: ws.path("masked"),
    })
    .unwrap();
    assert_eq!(summary.examples, 0);
    assert_eq!(summary.skipped, mono.len());
    assert_eq!(fs::read_to_string(ws.path("masked/masked.jsonl")).unwrap(), "");
    let written: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.path("masked/mask_summary.json")).unwrap()).unwrap();
    assert_eq!(written["skipped"], 12);
}

#[test]
fn prepare_data_splits_filters_and_transliterates() {
    let ws = Workspace::new();
    let nli = "a b c d e ## f g h i j k ## short\tp q\tentailment\ten\n\
               x y z w v\tq\tcontradiction\ten\ttrue\n\
               m n o p q\tq\tcontradiction\ten\tfalse\n";
    fs::write(ws.path("nli.tsv"), nli).unwrap();
    let summary = prepare_data(&PrepareDataArgs {
        task: TaskKind::Nli,
        input: ws.path("nli.tsv"),
        output: ws.path("nli_out.tsv"),
        split_dialogues: true,
        min_words: 5,
        keep_labels: vec!["entailment".into(), "contradiction".into()],
        merge: None,
        transliterate: Some("uppercase".into()),
        table: None,
        vocab_out: Some(ws.path("vocab.txt")),
        vocab_size: 50,
    })
    .unwrap();
    assert_eq!(summary.input_examples, 3);
    // two dialogue turns survive, the invalid example is dropped
    assert_eq!(summary.output_examples, 3);
    let out = read_classification_tsv(ws.path("nli_out.tsv"), "x").unwrap();
    assert_eq!(out[0].text_a, "A B C D E");
    assert_eq!(out[1].text_a, "F G H I J K");
    assert_eq!(out[0].label, "entailment");
    assert!(ws.path("nli_out.tsv.meta.json").is_file());
    assert!(Vocabulary::load(ws.path("vocab.txt")).unwrap().len() <= 50);

    let qa = vec![QaExample {
        context: "yeh files ko desk pe".into(),
        question: "files kahan".into(),
        answer_text: "desk".into(),
        answer_start: 13,
        language: LanguageTag::new("hi").unwrap(),
    }];
    write_qa_jsonl(ws.path("qa.jsonl"), &qa).unwrap();
    let summary = prepare_data(&PrepareDataArgs {
        task: TaskKind::Qa,
        input: ws.path("qa.jsonl"),
        output: ws.path("qa_out.jsonl"),
        split_dialogues: false,
        min_words: 5,
        keep_labels: vec![],
        merge: None,
        transliterate: Some("vowel-doubling".into()),
        table: None,
        vocab_out: None,
        vocab_size: 50,
    })
    .unwrap();
    assert_eq!(summary.rejected, 0);
    let out = read_qa_jsonl(ws.path("qa_out.jsonl")).unwrap();
    assert_eq!(out[0].answer_start, 17);
    assert_eq!(out[0].answer_text, "deesk");
}

#[test]
fn exit_codes() {
    assert_eq!(exit_code(&Error::NonFinite("loss".into())), 3);
    assert_eq!(exit_code(&Error::EmptyEvaluation), 1);
    let missing = Error::io("x", std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
    assert_eq!(exit_code(&missing), 2);
}

#[test]
fn every_subcommand_rejects_unknown_flags() {
    use clap::CommandFactory;
    Cli::command().debug_assert();
    for sub in ["prepare-data", "mask-dump", "train", "evaluate", "run-experiment"] {
        let r = Cli::try_parse_from(["codeswitch", sub, "--no-such-flag"]);
        assert!(r.is_err(), "{sub} accepted an unknown flag");
    }
}

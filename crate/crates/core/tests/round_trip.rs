use karmalevel::checkpoint::Checkpoint;
use karmalevel::dataset::{DatasetBundle, DatasetOptions};
use karmalevel::features::{extract_all, DEPTH, N_CHILDREN, SUBTREE_HEIGHT, SUBTREE_SIZE};
use karmalevel::model::{Model, ModelConfig};
use karmalevel::synthgen::{generate, GenConfig};
use karmalevel::thread::{read_threads, write_threads, Thread};

fn corpus(n: usize) -> Vec<Thread> {
    generate(&GenConfig {
        seed: 4,
        n_threads: n,
        ..GenConfig::default()
    })
    .unwrap()
}

#[test]
fn jsonl_round_trip_is_lossless_and_canonical() {
    let threads = corpus(100);
    let mut first = Vec::new();
    write_threads(&mut first, &threads).unwrap();
    let back = read_threads(first.as_slice()).unwrap();
    assert_eq!(back, threads);
    let mut second = Vec::new();
    write_threads(&mut second, &back).unwrap();
    assert_eq!(first, second);
}

#[test]
fn tree_features_are_consistent() {
    for t in corpus(100) {
        let feats = extract_all(&t);
        let at = |id: &str| t.comments.iter().position(|c| c.id == id).unwrap();
        for (i, c) in t.comments.iter().enumerate() {
            let f = feats[i].raw;
            let kids: Vec<usize> = t.comments.iter().enumerate().filter(|(_, k)| k.parent_id == c.id).map(|(j, _)| j).collect();
            assert_eq!(f[N_CHILDREN] as usize, kids.len());
            let size: f64 = 1.0 + kids.iter().map(|&j| feats[j].raw[SUBTREE_SIZE]).sum::<f64>();
            assert_eq!(f[SUBTREE_SIZE], size);
            let height = kids.iter().map(|&j| feats[j].raw[SUBTREE_HEIGHT] + 1.0).fold(0.0, f64::max);
            assert_eq!(f[SUBTREE_HEIGHT], height);
            let depth = if c.parent_id.is_empty() { 1.0 } else { feats[at(&c.parent_id)].raw[DEPTH] + 1.0 };
            assert_eq!(f[DEPTH], depth);
        }
    }
}

#[test]
fn bundle_and_checkpoint_survive_serialization() {
    let data = DatasetBundle::build(&corpus(60), DatasetOptions::default()).unwrap();
    let json = serde_json::to_string(&data).unwrap();
    let back: DatasetBundle = serde_json::from_str(&json).unwrap();
    assert_eq!(back.train, data.train);
    assert_eq!(back.vocab.sizes(), data.vocab.sizes());

    let model = Model::new(ModelConfig {
        n_bases: 3,
        context_width: 4,
        text_width: 4,
        vocab: data.vocab.sizes(),
        ..ModelConfig::default()
    })
    .unwrap();
    let ckpt = Checkpoint {
        model,
        vocab: Some(data.vocab.clone()),
        normalizer: Some(data.normalizer.clone()),
        quantizers: Some(data.quantizers.clone()),
    };
    let bytes = ckpt.to_bytes();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded.to_bytes(), bytes);
    for ex in data.test.iter().take(20) {
        assert_eq!(loaded.model.predict(ex).0, ckpt.model.predict(ex).0);
    }
}

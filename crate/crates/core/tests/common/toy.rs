use lident_core::clstm::ClstmConfig;
use lident_core::corpus::{Corpus, Instance, Label};
use lident_core::synthetic::random_text;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gradient-check network: l=40, kernels (5,3,3), pool 2, 4 features,
/// LSTM hidden 3, dense 8, 3 classes.
pub fn gradcheck_config(charset_dim: usize) -> ClstmConfig {
    ClstmConfig {
        seq_len: 40,
        charset_dim,
        conv_features: 4,
        conv_kernels: vec![5, 3, 3],
        pool: 2,
        lstm_hidden: 3,
        dense_units: 8,
        dropout_rate: 0.5,
        num_classes: 3,
        batch_size: 2,
        ..ClstmConfig::default()
    }
}

/// Small network for the convergence task.
pub fn toy_config() -> ClstmConfig {
    ClstmConfig {
        seq_len: 64,
        conv_features: 16,
        conv_kernels: vec![5, 3, 3],
        pool: 2,
        lstm_hidden: 8,
        dense_units: 32,
        dropout_rate: 0.5,
        epochs: 60,
        batch_size: 8,
        seed: 7,
        adam: lident_core::nn::AdamConfig {
            lr: 5e-3,
            ..Default::default()
        },
        ..ClstmConfig::default()
    }
}

/// Two labels over disjoint alphabets: `per_label` texts each.
pub fn disjoint_corpus(per_label: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabets = [("xa", ['a', 'b', 'c', 'd', 'e']), ("xb", ['v', 'w', 'x', 'y', 'z'])];
    let mut instances = Vec::new();
    for _ in 0..per_label {
        for (code, alphabet) in &alphabets {
            let len = rng.gen_range(30..80);
            instances.push(Instance {
                text: random_text(alphabet, len, &mut rng),
                label: Label::new(*code).unwrap(),
            });
        }
    }
    Corpus::from_instances(instances)
}

use std::collections::BTreeSet;

use qfl_core::crypto::{encrypt_bytes, serialize_weights, CipherMode, QkdKey};
use qfl_core::data::{generate_dataset, partition_iid, train_test_split, SyntheticConfig};
use qfl_core::federation::{
    establish_links, local_shuffle_order, LinkOutcome, LinkSetup, AggregationMode, EarlyStop, Federation, FederationConfig, KeyPair, LocalTraining,
    QkdSettings, RoundStatus, Server, StopReason, Transport,
};
use qfl_core::model::{backward, forward, init_model, sgd_step, Architecture, Dataset};
use qfl_core::qkd::{QkdPolicy, QuantumChannelConfig};
use qfl_core::Error;

const SEED: u64 = 7;

fn data(per_class: usize) -> (Dataset<f64>, Dataset<f64>) {
    let cfg = SyntheticConfig {
        samples_per_class: per_class,
        image_size: (8, 8),
        noise_sigma: 0.1,
        seed: SEED,
    };
    let all = generate_dataset::<f64>(&cfg).unwrap();
    train_test_split(&all, 0.2, SEED).unwrap()
}

fn config(clients: usize, transport: Transport) -> FederationConfig {
    FederationConfig {
        master_seed: SEED,
        arch: Architecture::small_cnn(8, 8, 2),
        rounds: 3,
        local: LocalTraining {
            epochs: 1,
            batch_size: 8,
            learning_rate: 0.1,
        },
        aggregation: AggregationMode::default(),
        early_stop: EarlyStop {
            epsilon: 0.0,
            patience: 1,
        },
        transport,
        qkd: QkdSettings {
            n_qubits: 2048,
            channels: vec![QuantumChannelConfig::default(); clients],
            policy: QkdPolicy::default(),
            cipher: CipherMode::Expanded,
            expanded_key_bits: 256,
        },
        tamper_uploads: BTreeSet::new(),
        fail_fast: false,
        parallel: true,
    }
}

fn federation(cfg: &FederationConfig, clients: usize) -> Federation {
    let (train, test) = data(40);
    let part = partition_iid(&train, clients, SEED).unwrap();
    Federation::new(cfg.clone(), part, test).unwrap()
}

#[test]
fn encryption_is_transparent_to_training() {
    let plain = federation(&config(3, Transport::Plaintext), 3).run().unwrap();
    let enc = federation(&config(3, Transport::Encrypted), 3).run().unwrap();
    assert!(plain.final_weights.bitwise_eq(&enc.final_weights));
    for (a, b) in plain.records.iter().zip(&enc.records) {
        assert_eq!(a.without_security_fields(), b.without_security_fields());
    }
    assert!(enc.records.iter().all(|r| r.clients.iter().all(|c| c.key_bits_used > 0)));
}

#[test]
fn single_client_matches_centralized_sgd() {
    let mut cfg = config(1, Transport::Encrypted);
    cfg.rounds = 2;
    cfg.local.epochs = 2;
    let (train, test) = data(30);
    let part = partition_iid(&train, 1, SEED).unwrap();
    let shard = part.shards()[0].clone();
    let out = Federation::new(cfg.clone(), part, test).unwrap().run().unwrap();

    let mut w = init_model::<f64>(&cfg.arch, SEED);
    for t in 0..cfg.rounds {
        for e in 0..cfg.local.epochs {
            for chunk in local_shuffle_order(SEED, 0, t, e, shard.len()).chunks(cfg.local.batch_size) {
                let b = shard.batch(chunk).unwrap();
                let (_, cache) = forward(&w, &cfg.arch, &b).unwrap();
                let g = backward(&w, &cfg.arch, &b, &cache).unwrap();
                w = sgd_step(&w, &g, cfg.local.learning_rate).unwrap();
            }
        }
    }
    assert!(out.final_weights.bitwise_eq(&w));
}

#[test]
fn eavesdropped_link_is_isolated() {
    let mut cfg = config(3, Transport::Encrypted);
    cfg.qkd.channels[1] = cfg.qkd.channels[1].with_eve(1.0);
    let out = federation(&cfg, 3).run().unwrap();
    for r in &out.records {
        assert_eq!(r.status, RoundStatus::Completed);
        assert_eq!(r.included_clients, 2);
        assert!(!r.security_alert);
        let c = &r.clients[1];
        assert!(c.aborted);
        assert!(!c.received_global);
        assert!(c.qber.unwrap() > 0.11);
        assert!(!c.qkd_sessions.is_empty());
        assert!(r.clients[0].received_global && r.clients[2].received_global);
    }
}

#[test]
fn all_links_aborted_raises_alert_and_keeps_weights() {
    let mut cfg = config(2, Transport::Encrypted);
    cfg.rounds = 2;
    for ch in cfg.qkd.channels.iter_mut() {
        *ch = ch.with_eve(1.0);
    }
    let out = federation(&cfg, 2).run().unwrap();
    assert_eq!(out.records.len(), 2);
    for r in &out.records {
        assert!(r.is_failed() && r.security_alert);
        assert_eq!(r.included_clients, 0);
    }
    assert!(out.final_weights.bitwise_eq(&out.initial_weights));

    cfg.fail_fast = true;
    let out = federation(&cfg, 2).run().unwrap();
    assert_eq!(out.records.len(), 1);
    assert!(matches!(out.stop, StopReason::FailFast { round: 0, security: true, .. }));
}

#[test]
fn tampered_upload_is_rejected() {
    let mut cfg = config(3, Transport::Encrypted);
    cfg.rounds = 1;
    cfg.tamper_uploads.insert(2);
    let out = federation(&cfg, 3).run().unwrap();
    let r = &out.records[0];
    assert_eq!(r.included_clients, 2);
    let c = &r.clients[2];
    assert!(c.tampered_in_transit && c.aborted);
    assert!(c.abort_reason.as_deref().unwrap().contains("integrity"), "{:?}", c.abort_reason);
}

#[test]
fn schedule_does_not_change_results() {
    let mut seq = config(4, Transport::Encrypted);
    seq.parallel = false;
    let par = config(4, Transport::Encrypted);
    let a = federation(&seq, 4).run().unwrap();
    let b = federation(&par, 4).run().unwrap();
    assert!(a.final_weights.bitwise_eq(&b.final_weights));
    for (x, y) in a.records.iter().zip(&b.records) {
        let (mut x, mut y) = (x.clone(), y.clone());
        x.wall_time_ms = 0.0;
        y.wall_time_ms = 0.0;
        assert_eq!(x, y);
    }
}

#[test]
fn raw_data_is_read_only_during_local_training() {
    let cfg = config(3, Transport::Encrypted);
    let mut fed = federation(&cfg, 3);
    for t in 0..2 {
        let before: Vec<usize> = fed.clients().iter().map(|c| c.shard().read_count()).collect();
        fed.run_round(t).unwrap();
        let after: Vec<usize> = fed.clients().iter().map(|c| c.shard().read_count()).collect();
        // one read per local training call; key exchange, upload, aggregation
        // and broadcast never touch samples
        for (b, a) in before.iter().zip(&after) {
            assert_eq!(a - b, 1);
        }
    }
}

#[test]
fn key_id_reuse_within_a_round_is_a_protocol_error() {
    let arch = Architecture::small_cnn(8, 8, 2);
    let w = init_model::<f64>(&arch, 1);
    let mut server = Server::new(arch, w.clone(), vec![0, 1]).unwrap();
    server.begin_round(0);
    let bits: Vec<bool> = (0..256).map(|i| i % 3 == 0).collect();
    let key = QkdKey::new(bits, 99).unwrap();
    let pair = KeyPair {
        client: key.clone(),
        server: key.clone(),
        offset: 0,
    };
    let frame = encrypt_bytes(&serialize_weights(&w).unwrap(), &key, CipherMode::Expanded)
        .unwrap()
        .to_bytes()
        .unwrap();
    server
        .receive_upload(0, &frame, Transport::Encrypted, Some(&pair), CipherMode::Expanded)
        .unwrap();
    let err = server
        .receive_upload(1, &frame, Transport::Encrypted, Some(&pair), CipherMode::Expanded)
        .unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    server.begin_round(1);
    assert!(server
        .receive_upload(1, &frame, Transport::Encrypted, Some(&pair), CipherMode::Expanded)
        .is_ok());
}

#[test]
fn zero_rounds_and_early_stop() {
    let mut cfg = config(2, Transport::Plaintext);
    cfg.rounds = 0;
    let out = federation(&cfg, 2).run().unwrap();
    assert!(out.records.is_empty());
    assert!(out.final_weights.bitwise_eq(&out.initial_weights));

    cfg.rounds = 10;
    cfg.local.learning_rate = 0.0;
    cfg.early_stop = EarlyStop {
        epsilon: 1e-9,
        patience: 2,
    };
    let out = federation(&cfg, 2).run().unwrap();
    assert_eq!(out.records.len(), 3);
    assert_eq!(out.stop, StopReason::EarlyStop { round: 2 });
}

#[test]
fn strict_otp_consumes_whole_payload_lengths() {
    let mut cfg = config(2, Transport::Encrypted);
    cfg.rounds = 1;
    cfg.qkd.cipher = CipherMode::StrictOtp;
    let per = cfg.bits_per_transfer();
    let out = federation(&cfg, 2).run().unwrap();
    for c in &out.records[0].clients {
        assert_eq!(c.key_bits_used, 2 * per);
        assert!(c.received_global);
    }
}

#[test]
fn attacking_one_link_leaves_other_links_untouched() {
    let clean = vec![QuantumChannelConfig::default(); 3];
    let mut attacked = clean.clone();
    attacked[1] = attacked[1].with_eve(1.0);
    let keys = |channels: &[QuantumChannelConfig]| {
        let setup = LinkSetup {
            master_seed: SEED,
            round: 0,
            n_qubits: 2048,
            policy: QkdPolicy::default(),
            channels,
            parallel: false,
        };
        establish_links(&setup, &[0, 1, 2])
            .unwrap()
            .into_iter()
            .map(|o| match o {
                LinkOutcome::Keyed(mut ring) => Some(ring.reserve(256).unwrap().client.bits().to_vec()),
                LinkOutcome::Aborted { .. } => None,
            })
            .collect::<Vec<_>>()
    };
    let (a, b) = (keys(&clean), keys(&attacked));
    assert_eq!(a[0], b[0]);
    assert_eq!(a[2], b[2]);
    assert!(a[1].is_some() && b[1].is_none());

    let mut cfg = config(3, Transport::Encrypted);
    cfg.rounds = 1;
    let base = federation(&cfg, 3).run().unwrap();
    cfg.qkd.channels[1] = cfg.qkd.channels[1].with_eve(1.0);
    let hit = federation(&cfg, 3).run().unwrap();
    for i in [0, 2] {
        let (x, y) = (&base.records[0].clients[i], &hit.records[0].clients[i]);
        assert_eq!(x.local_loss, y.local_loss);
        assert_eq!(x.qkd_sessions, y.qkd_sessions);
        assert_eq!(x.key_bits_used, y.key_bits_used);
    }
}

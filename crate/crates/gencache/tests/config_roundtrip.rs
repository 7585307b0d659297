use gencache::config::{ExecutorMode, ServiceConfig, KEYS};
use proptest::prelude::*;

fn config() -> impl Strategy<Value = ServiceConfig> {
    (
        (1u16..u16::MAX, "[a-z][a-z0-9_/]{0,12}", 8usize..2048, proptest::option::of("[a-z0-9-]{1,10}")),
        (1u32..1000, 1u32..1000, 2usize..20, 1u32..100, 1u32..=100),
        (any::<bool>(), 1usize..16, 1usize..100_000, 1usize..1 << 30, 1u64..60_000),
    )
        .prop_map(|((port, dir, dims, model), (tp, tr, nu, rho, gamma), (script, workers, entries, bytes, timeout))| {
            let mut c = ServiceConfig {
                listen: format!("127.0.0.1:{port}"),
                data_dir: dir.into(),
                ..ServiceConfig::default()
            };
            c.embedder.dims = dims;
            c.backend_model = model;
            c.thresholds.t_prompt = tp as f64 / 1000.0;
            c.thresholds.t_response = tr as f64 / 1000.0;
            c.nu = nu;
            c.rho = rho;
            c.gamma_percent = gamma as f64;
            c.executor = if script { ExecutorMode::Script } else { ExecutorMode::Declarative };
            c.codegen_workers = workers;
            c.cache.max_entries = entries;
            c.cache.max_total_bytes = bytes;
            c.exec_timeout_ms = timeout;
            c
        })
}

proptest! {
    #[test]
    fn load_serialize_load_is_identity(cfg in config()) {
        cfg.validate().unwrap();
        let text = cfg.to_text();
        let again = ServiceConfig::from_text(&text).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_text(), text);
    }
}

#[test]
fn written_file_lists_every_key_once() {
    let text = ServiceConfig::default().to_text();
    for key in KEYS {
        assert_eq!(text.lines().filter(|l| l.starts_with(&format!("{key} ="))).count(), 1, "{key}");
    }
}

#[test]
fn load_reads_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gencache.conf");
    std::fs::write(&path, "codegen.workers = 3\n").unwrap();
    assert_eq!(ServiceConfig::load(&path).unwrap().codegen_workers, 3);
    assert!(ServiceConfig::load(&dir.path().join("missing.conf")).is_err());
}

use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use mtlvm_ffi::*;

fn write_corpus(dir: &std::path::Path) -> CString {
    let path = dir.join("corpus.jsonl");
    let mut lines = String::new();
    for e in 0..3 {
        for t in 0..3 {
            let words = if (e + t) % 2 == 0 { "\"a\",\"b\",\"a\"" } else { "\"c\",\"d\",\"c\"" };
            lines.push_str(&format!("{{\"entity\":\"e{e}\",\"epoch\":{t},\"tokens\":[{words}]}}\n"));
        }
    }
    std::fs::write(&path, lines).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = mtlvm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn train_query_save_reload() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_corpus(dir.path());
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(mtlvm_corpus_load(path.as_ptr(), &mut corpus), MtlvmStatus::Ok);
        let mut stats = MtlvmCorpusStats::default();
        assert_eq!(mtlvm_corpus_stats(corpus, &mut stats), MtlvmStatus::Ok);
        assert_eq!((stats.documents, stats.entities, stats.units, stats.chains, stats.vocab_size), (9, 3, 9, 3, 4));

        let cfg = CString::new("C = 2\nsweeps = 10\nburn_in = 2\nseed = 4\n").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(mtlvm_model_new(corpus, cfg.as_ptr(), &mut model), MtlvmStatus::Ok);
        assert_eq!(mtlvm_model_run(model, 5), MtlvmStatus::Ok);

        let (mut c, mut u, mut v) = (0usize, 0usize, 0usize);
        assert_eq!(mtlvm_model_dims(model, &mut c, &mut u, &mut v), MtlvmStatus::Ok);
        assert_eq!((c, u, v), (2, 9, 4));

        let mut states = vec![0u32; u];
        assert_eq!(mtlvm_model_states(model, states.as_mut_ptr(), u), MtlvmStatus::Ok);
        assert!(states.iter().all(|&s| s < 2));

        let mut rho = vec![0.0; c * c];
        assert_eq!(mtlvm_model_transitions(model, rho.as_mut_ptr(), rho.len()), MtlvmStatus::Ok);
        for row in rho.chunks(c) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let mut dist = vec![0.0; v];
        assert_eq!(mtlvm_model_state_tokens(model, 1, dist.as_mut_ptr(), v), MtlvmStatus::Ok);
        assert!(dist.iter().sum::<f64>() <= 1.0 + 1e-12);
        assert_eq!(mtlvm_model_state_tokens(model, 2, dist.as_mut_ptr(), v), MtlvmStatus::OutOfRange);
        assert!(last_error().contains("out of range"));

        let mut lp = 0.0;
        assert_eq!(mtlvm_model_log_prob(model, &mut lp), MtlvmStatus::Ok);
        assert!(lp.is_finite() && lp < 0.0);

        let ckpt = CString::new(dir.path().join("ckpt.json").to_str().unwrap()).unwrap();
        assert_eq!(mtlvm_model_save(model, ckpt.as_ptr()), MtlvmStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(mtlvm_model_load(corpus, ckpt.as_ptr(), &mut back), MtlvmStatus::Ok);
        let mut lp2 = 0.0;
        assert_eq!(mtlvm_model_log_prob(back, &mut lp2), MtlvmStatus::Ok);
        assert_eq!(lp, lp2);

        mtlvm_model_free(back);
        mtlvm_model_free(model);
        mtlvm_corpus_free(corpus);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(mtlvm_corpus_load(ptr::null(), &mut corpus), MtlvmStatus::NullPointer);
        let missing = CString::new("/nonexistent/corpus.json").unwrap();
        assert_eq!(mtlvm_corpus_load(missing.as_ptr(), &mut corpus), MtlvmStatus::Io);
        assert!(last_error().contains("/nonexistent/corpus.json"));
        assert!(corpus.is_null());

        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus(dir.path());
        assert_eq!(mtlvm_corpus_load(path.as_ptr(), &mut corpus), MtlvmStatus::Ok);
        assert!(mtlvm_last_error_message().is_null());
        let bad = CString::new("C = 2\nsweeps = 3\nburn_in = 3\n").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(mtlvm_model_new(corpus, bad.as_ptr(), &mut model), MtlvmStatus::Precondition);
        let unknown = CString::new("colour = 1\n").unwrap();
        assert_eq!(mtlvm_model_new(corpus, unknown.as_ptr(), &mut model), MtlvmStatus::Parse);
        assert!(model.is_null());

        let cfg = CString::new("C = 2\nsweeps = 3\nburn_in = 1\n").unwrap();
        assert_eq!(mtlvm_model_new(corpus, cfg.as_ptr(), &mut model), MtlvmStatus::Ok);
        let mut small = [0u32; 2];
        assert_eq!(mtlvm_model_states(model, small.as_mut_ptr(), 2), MtlvmStatus::BufferTooSmall);

        mtlvm_model_free(model);
        mtlvm_corpus_free(corpus);
        mtlvm_model_free(ptr::null_mut());
        mtlvm_corpus_free(ptr::null_mut());
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(mtlvm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/mtlvm.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["mtlvm_corpus_load", "mtlvm_model_run", "mtlvm_last_error_message", "MTLVM_STATUS_INVARIANT"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; syntax check skipped");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ MtlvmCorpus *c = 0; MtlvmStatus s = mtlvm_corpus_load(\"x\", &c); mtlvm_corpus_free(c); return s == MTLVM_STATUS_OK ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    let status = Command::new(cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status().unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}

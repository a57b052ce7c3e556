use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use miggt::encoding::ModalityId;
use miggt::io::synthetic::{write_synthetic, SyntheticSpec};
use miggt_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(miggt_last_error_message()) }.to_string_lossy().into_owned()
}

/// A small synthetic dataset with a run config; returns the config path.
fn fixture(dir: &Path) -> std::path::PathBuf {
    let spec = SyntheticSpec {
        users_per_group: 15,
        items_per_group: 15,
        feature_dims: vec![(ModalityId::Text, 4), (ModalityId::Visual, 3)],
        seed: 5,
        ..Default::default()
    };
    write_synthetic(&spec, dir).unwrap();
    let cfg = dir.join("ffi.cfg");
    std::fs::write(
        &cfg,
        "manifest = manifest.txt\nd = 8\nd_att = 4\nc_samples = 3\nlearning_rate = 0.01\nmax_epochs = 3\n",
    )
    .unwrap();
    cfg
}

fn open(cfg: &Path) -> *mut MiggtSession {
    let mut session = ptr::null_mut();
    let status = unsafe { miggt_session_open(cpath(cfg).as_ptr(), &mut session) };
    assert_eq!(status, MiggtStatus::Ok, "{}", last_error());
    assert!(!session.is_null());
    session
}

#[test]
fn session_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let s = open(&cfg);
    unsafe {
        assert_eq!(miggt_session_num_users(s), 30);
        assert_eq!(miggt_session_num_items(s), 30);
        assert_eq!(miggt_session_dim(s), 8);

        let mut best = u32::MAX;
        assert_eq!(miggt_session_train(s, &mut best), MiggtStatus::Ok, "{}", last_error());
        assert!((1..=3).contains(&best));
        assert_eq!(last_error(), "");

        let mut trained = MiggtMetrics::default();
        assert_eq!(miggt_session_evaluate(s, MiggtSplit::Test, &mut trained), MiggtStatus::Ok);
        assert!(trained.users_evaluated > 0);
        assert!((0.0..=1.0).contains(&trained.ndcg_at_20));

        let params = dir.path().join("p.mmpr");
        assert_eq!(miggt_session_save_params(s, cpath(&params).as_ptr()), MiggtStatus::Ok);
        let mut emb = vec![0.0; 8];
        assert_eq!(miggt_session_user_embedding(s, 3, emb.as_mut_ptr(), emb.len()), MiggtStatus::Ok);

        // a fresh session with the saved parameters scores identically
        let t = open(&cfg);
        let mut fresh = MiggtMetrics::default();
        assert_eq!(miggt_session_evaluate(t, MiggtSplit::Test, &mut fresh), MiggtStatus::Ok);
        assert_eq!(miggt_session_load_params(t, cpath(&params).as_ptr()), MiggtStatus::Ok);
        let mut loaded = MiggtMetrics::default();
        assert_eq!(miggt_session_evaluate(t, MiggtSplit::Test, &mut loaded), MiggtStatus::Ok);
        assert_eq!(loaded, trained);
        let mut emb2 = vec![0.0; 8];
        assert_eq!(miggt_session_user_embedding(t, 3, emb2.as_mut_ptr(), emb2.len()), MiggtStatus::Ok);
        assert_eq!(emb, emb2);

        miggt_session_free(t);
        miggt_session_free(s);
    }
}

#[test]
fn recommendations_skip_training_items() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let s = open(&cfg);
    let train_items: Vec<usize> = {
        let run = miggt::io::config::RunConfig::load(&cfg).unwrap();
        let (_, data) = run.load_data().unwrap();
        data.train.pairs().iter().filter(|p| p.0 == 0).map(|p| p.1).collect()
    };
    unsafe {
        let mut items = vec![usize::MAX; 40];
        let mut written = 0;
        assert_eq!(
            miggt_session_recommend(s, 0, items.len(), items.as_mut_ptr(), &mut written),
            MiggtStatus::Ok
        );
        assert_eq!(written, 30 - train_items.len());
        assert!(items[..written].iter().all(|i| *i < 30 && !train_items.contains(i)));
        assert!(items[written..].iter().all(|&i| i == usize::MAX));

        let mut buf = [0 as std::ffi::c_char; 8];
        let mut needed = 0;
        assert_eq!(miggt_session_item_id(s, 12, buf.as_mut_ptr(), buf.len(), &mut needed), MiggtStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "i12");
        assert_eq!(needed, 4);
        assert_eq!(
            miggt_session_item_id(s, 12, buf.as_mut_ptr(), 3, &mut needed),
            MiggtStatus::BufferTooSmall
        );

        assert_eq!(
            miggt_session_recommend(s, 30, 5, items.as_mut_ptr(), &mut written),
            MiggtStatus::InvalidArgument
        );
        assert_eq!(written, 0);
        miggt_session_free(s);
    }
}

#[test]
fn failures_report_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut session = ptr::null_mut();
        let missing = cpath(&dir.path().join("absent.cfg"));
        assert_eq!(miggt_session_open(missing.as_ptr(), &mut session), MiggtStatus::Io);
        assert!(session.is_null());
        assert!(last_error().contains("absent.cfg"));

        assert_eq!(miggt_session_open(ptr::null(), &mut session), MiggtStatus::NullArgument);
        assert_eq!(miggt_session_train(ptr::null_mut(), ptr::null_mut()), MiggtStatus::NullArgument);
        assert_eq!(miggt_session_num_users(ptr::null()), 0);
        miggt_session_free(ptr::null_mut());

        let bad = dir.path().join("bad.cfg");
        std::fs::write(&bad, "manifest = m.txt\ngamma = 2\n").unwrap();
        assert_eq!(miggt_session_open(cpath(&bad).as_ptr(), &mut session), MiggtStatus::Config);

        let cfg = fixture(dir.path());
        let s = open(&cfg);
        let junk = dir.path().join("junk.mmpr");
        std::fs::write(&junk, b"not a parameter file").unwrap();
        assert_eq!(miggt_session_load_params(s, cpath(&junk).as_ptr()), MiggtStatus::Format);
        let mut short = [0.0; 2];
        assert_eq!(
            miggt_session_user_embedding(s, 0, short.as_mut_ptr(), short.len()),
            MiggtStatus::BufferTooSmall
        );
        miggt_session_free(s);
    }
}

#[test]
fn stateless_helpers() {
    unsafe {
        let version = CStr::from_ptr(miggt_version()).to_str().unwrap();
        assert_eq!(version, env!("CARGO_PKG_VERSION"));

        let mut coef = [0.0; 4];
        assert_eq!(miggt_mgdn_coefficients(1.0, 1.0, 3, coef.as_mut_ptr(), coef.len()), MiggtStatus::Ok);
        assert!(coef.iter().all(|c| (c - 0.25).abs() < 1e-15));
        assert_eq!(
            miggt_mgdn_coefficients(1.0, 1.0, 4, coef.as_mut_ptr(), coef.len()),
            MiggtStatus::BufferTooSmall
        );
        assert_eq!(miggt_mgdn_coefficients(-1.0, 1.0, 2, coef.as_mut_ptr(), coef.len()), MiggtStatus::Config);

        let ranked = [7usize, 3, 9, 1];
        let mut v = 0.0;
        assert_eq!(miggt_ndcg_at_k(ranked.as_ptr(), 4, [3usize].as_ptr(), 1, 4, &mut v), MiggtStatus::Ok);
        assert!((v - 0.63093).abs() < 1e-5);
        assert_eq!(miggt_ndcg_at_k(ranked.as_ptr(), 4, [9usize, 7].as_ptr(), 2, 4, &mut v), MiggtStatus::Ok);
        assert!((v - 0.91972).abs() < 1e-5);
        assert_eq!(miggt_ndcg_at_k(ptr::null(), 4, ptr::null(), 0, 4, &mut v), MiggtStatus::NullArgument);
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/miggt.h")).unwrap();
    for name in [
        "typedef struct MiggtSession MiggtSession;",
        "MIGGT_STATUS_BUFFER_TOO_SMALL = 8",
        "MiggtStatus miggt_session_open(const char *config_path, MiggtSession **out);",
        "MiggtStatus miggt_session_evaluate(",
        "size_t miggt_session_num_items(const MiggtSession *session);",
        "MiggtStatus miggt_session_recommend(",
        "const char *miggt_last_error_message(void);",
        "MiggtStatus miggt_ndcg_at_k(",
    ] {
        assert!(header.contains(name), "header lacks `{name}`");
    }
}

#[test]
fn header_compiles_as_c() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let Ok(out) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(root.join("include"))
        .arg(root.join("tests/c/smoke.c"))
        .output()
    else {
        eprintln!("no C compiler on PATH; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

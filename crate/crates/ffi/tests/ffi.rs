use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use promogen::config::TrainConfig;
use promogen::filter::{count_valid, FilterParams};
use promogen::pipeline::{generate_synthetic, save_checkpoint, train, SyntheticSpec};
use promogen_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pmg_last_error_message()) }.to_string_lossy().into_owned()
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let mut cfg = TrainConfig::default();
    cfg.network.width = 8;
    cfg.network.blocks = 1;
    cfg.network.heads = 2;
    cfg.network.max_frames = 32;
    cfg.loss.disc_hidden = Some(8);
    cfg.train.batch_size = 2;
    cfg.train.iterations_per_epoch = Some(1);
    cfg.curriculum.e_total = 4;
    cfg.data = SyntheticSpec { count: 4, frames: 24, ..Default::default() };
    let data = generate_synthetic(&cfg.data).unwrap();
    let out = train(&data, &cfg).unwrap();
    let path = dir.join("model.ckpt");
    save_checkpoint(&out.checkpoint, &path).unwrap();
    path
}

#[test]
fn filtering_entry_points() {
    let mut count = 0u64;
    assert_eq!(unsafe { pmg_fm_count_valid(64, 5, 4, &mut count) }, PmgStatus::Ok);
    assert_eq!(count as u128, count_valid(&FilterParams::new(64, 5, 4).unwrap()));
    assert_eq!(unsafe { pmg_fm_count_valid(1000, 100, 0, &mut count) }, PmgStatus::Overflow);
    assert_eq!(unsafe { pmg_fm_count_valid(10, 1, 0, ptr::null_mut()) }, PmgStatus::NullPointer);

    let mut a = [0usize; 20];
    assert_eq!(unsafe { pmg_fm_sample(196, 20, 4, 3, a.as_mut_ptr(), a.len()) }, PmgStatus::Ok);
    assert!(a.windows(2).all(|w| w[1] - w[0] >= 5) && a[19] < 196);
    assert_eq!(last_error(), "");
    let mut b = [0usize; 20];
    unsafe { pmg_fm_sample(196, 20, 4, 3, b.as_mut_ptr(), b.len()) };
    assert_eq!(a, b);
    assert_eq!(unsafe { pmg_fm_sample(196, 20, 4, 3, b.as_mut_ptr(), 19) }, PmgStatus::BufferTooSmall);
    assert_eq!(unsafe { pmg_fm_sample(10, 4, 3, 0, b.as_mut_ptr(), 20) }, PmgStatus::Infeasible);
    assert!(!last_error().is_empty());

    let mut k = 0usize;
    let ks: Vec<usize> = (1..=4)
        .map(|s| {
            assert_eq!(unsafe { pmg_k_min_for_stage(s, 4, &mut k) }, PmgStatus::Ok);
            k
        })
        .collect();
    assert_eq!(ks, [20, 13, 7, 1]);
    assert_eq!(unsafe { pmg_k_min_for_stage(5, 4, &mut k) }, PmgStatus::InvalidArgument);
}

#[test]
fn model_handle_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(tiny_checkpoint(dir.path()).to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { pmg_model_load(path.as_ptr(), &mut model) }, PmgStatus::Ok);
    assert!(!model.is_null());
    let d = unsafe { pmg_model_feature_dim(model) };
    let a = unsafe { pmg_model_anchor_dim(model) };
    assert_eq!((d, a), (66, 63));

    let n = 16;
    let traj: Vec<f64> = (0..n * 3).map(|i| (i as f64) * 0.01).collect();
    let pos = [2usize, 9];
    let poses = vec![0.1; 2 * a];
    let mut out = vec![0.0; n * d];
    let run = |out: &mut Vec<f64>, seed| unsafe {
        pmg_model_sample(model, n, traj.as_ptr(), pos.as_ptr(), poses.as_ptr(), 2, 3, seed, out.as_mut_ptr(), out.len())
    };
    assert_eq!(run(&mut out, 4), PmgStatus::Ok);
    assert!(out.iter().all(|v| v.is_finite()));
    let mut again = vec![0.0; n * d];
    run(&mut again, 4);
    assert_eq!(out, again);

    let status = unsafe {
        pmg_model_sample(model, n, ptr::null(), ptr::null(), ptr::null(), 0, 0, 1, out.as_mut_ptr(), out.len() - 1)
    };
    assert_eq!(status, PmgStatus::BufferTooSmall);
    let bad = [9usize, 2];
    let status = unsafe {
        pmg_model_sample(model, n, ptr::null(), bad.as_ptr(), poses.as_ptr(), 2, 0, 1, out.as_mut_ptr(), out.len())
    };
    assert_eq!(status, PmgStatus::InvalidArgument);
    unsafe { pmg_model_free(model) };
    unsafe { pmg_model_free(ptr::null_mut()) };

    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pmg_model_load(missing.as_ptr(), &mut m) }, PmgStatus::Io);
    assert!(m.is_null());
    assert_eq!(unsafe { pmg_model_load(ptr::null(), &mut m) }, PmgStatus::NullPointer);
}

#[test]
fn header_is_current_and_links_from_c() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/promogen.h")).unwrap();
    for name in ["pmg_fm_sample", "pmg_model_load", "pmg_model_sample", "pmg_last_error_message", "PMG_STATUS_OK"] {
        assert!(header.contains(name), "{name} missing from header");
    }

    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libpromogen_ffi.a");
    let Ok(cc) = std::env::var("CC").or_else(|_| which("cc").ok_or(())) else {
        eprintln!("no C compiler found; skipping C link check");
        return;
    };
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = tiny_checkpoint(dir.path());
    let out = Command::new(&exe).arg(&ckpt).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which(name: &str) -> Option<String> {
    std::env::var_os("PATH")?
        .to_str()?
        .split(':')
        .map(|d| Path::new(d).join(name))
        .find(|p| p.is_file())
        .map(|p| p.to_string_lossy().into_owned())
}

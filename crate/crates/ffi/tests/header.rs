use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn exported_functions() -> Vec<String> {
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    src.lines()
        .filter_map(|l| {
            let rest = l.trim_start().strip_prefix("pub ")?;
            let rest = rest.strip_prefix("unsafe ").unwrap_or(rest);
            let name = rest.strip_prefix("extern \"C\" fn ")?;
            Some(name.split('(').next().unwrap().to_string())
        })
        .collect()
}

#[test]
fn header_declares_every_exported_function() {
    let header = std::fs::read_to_string(crate_dir().join("include/simulst.h")).unwrap();
    let names = exported_functions();
    assert!(names.len() >= 20, "{names:?}");
    for name in names {
        assert!(
            header.contains(&format!(" {name}(")) || header.contains(&format!("*{name}(")),
            "{name} missing"
        );
    }
    for ty in [
        "typedef struct SimulstLog SimulstLog;",
        "typedef struct SimulstLa SimulstLa;",
        "typedef struct SimulstSchedule SimulstSchedule;",
    ] {
        assert!(header.contains(ty), "{ty}");
    }
    assert!(header.contains("SIMULST_STATUS_OK = 0"));
}

fn have_cc() -> bool {
    Command::new("cc")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

/// Directory holding the library artifacts of this build.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    if !have_cc() {
        eprintln!("cc not found; skipping C link check");
        return;
    }
    let lib = artifact_dir().join("libsimulst_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping C link check", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

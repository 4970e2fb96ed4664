use std::process::Command;

fn main() {
    println!("cargo:rerun-if-env-changed=VECSVC_BUILD_ID");
    println!("cargo:rerun-if-changed=../../.git/HEAD");
    println!("cargo:rerun-if-changed=../../.git/index");
    let id = std::env::var("VECSVC_BUILD_ID").ok().or_else(|| {
        let out = Command::new("git")
            .args(["describe", "--always", "--dirty", "--tags"])
            .output()
            .ok()?;
        let s = String::from_utf8(out.stdout).ok()?;
        let s = s.trim();
        (out.status.success() && !s.is_empty()).then(|| s.to_string())
    });
    let id = id.unwrap_or_else(|| format!("v{}", std::env::var("CARGO_PKG_VERSION").unwrap_or_default()));
    println!("cargo:rustc-env=VECSVC_BUILD_ID={id}");
}

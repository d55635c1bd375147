use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use appds::Sha256Digest;
use appds::adapter::{AdapterError, AdapterService, CachingClient, FetchError, Published, publish};
use appds::http::BackgroundServer;
use appds::synth::{GenFormat, GenSpec, write_tree};
use axum::Router;
use axum::extract::Path as UrlPath;
use axum::routing::get;

/// Relative path → (digest, permission bits) for every entry under `root`.
fn tree_fingerprint(root: &Path) -> BTreeMap<String, (Option<Sha256Digest>, u32)> {
    use std::os::unix::fs::PermissionsExt;
    walkdir::WalkDir::new(root)
        .into_iter()
        .map(|e| e.unwrap())
        .map(|e| {
            let rel = e
                .path()
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            let meta = fs::symlink_metadata(e.path()).unwrap();
            let digest = meta
                .is_file()
                .then(|| Sha256Digest::of(&fs::read(e.path()).unwrap()));
            (rel, (digest, meta.permissions().mode()))
        })
        .collect()
}

fn serve(published: Published) -> BackgroundServer {
    let svc = AdapterService::new(published);
    BackgroundServer::start(svc.router(), "127.0.0.1:0".parse().unwrap()).unwrap()
}

#[test]
fn identical_content_is_stored_once() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    fs::create_dir_all(root.path().join("a")).unwrap();
    fs::create_dir_all(root.path().join("b")).unwrap();
    fs::write(root.path().join("a/x.dat"), b"same bytes").unwrap();
    fs::write(root.path().join("b/y.dat"), b"same bytes").unwrap();

    let (published, report) = publish(root.path(), 1, "site_a", out.path()).unwrap();
    assert_eq!(published.catalog.entries.len(), 2);
    assert_eq!(published.store.len().unwrap(), 1);
    assert_eq!(report.objects, 1);
    let paths: Vec<&str> = published
        .catalog
        .entries
        .iter()
        .map(|e| e.path.as_str())
        .collect();
    assert_eq!(paths, ["a/x.dat", "b/y.dat"]);
}

#[test]
fn empty_root_publishes_empty_catalog() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let (published, report) = publish(root.path(), 1, "empty", out.path()).unwrap();
    assert!(published.catalog.entries.is_empty());
    assert!(report.skipped.is_empty());
    assert_eq!(published.catalog.generated_at_ns, 0);
}

#[test]
fn generated_tree_with_duplicate_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let files = write_tree(&GenSpec::new(GenFormat::Dat1, 9, 5, 3), root.path()).unwrap();
    fs::copy(
        root.path().join(&files[4].path),
        root.path().join("copy_of_run.dat"),
    )
    .unwrap();

    let out1 = tempfile::tempdir().unwrap();
    let out2 = tempfile::tempdir().unwrap();
    let (p1, _) = publish(root.path(), 4, "gen", out1.path()).unwrap();
    let (p2, _) = publish(root.path(), 4, "gen", out2.path()).unwrap();
    assert_eq!(p1.catalog.entries.len(), 10);
    assert_eq!(p1.store.len().unwrap(), 9);
    assert_eq!(p1.catalog, p2.catalog);
    let c1 = fs::read(out1.path().join("catalog.json")).unwrap();
    let c2 = fs::read(out2.path().join("catalog.json")).unwrap();
    assert_eq!(Sha256Digest::of(&c1), Sha256Digest::of(&c2));
    assert_eq!(Published::load(out1.path()).unwrap().catalog, p1.catalog);
}

#[test]
fn output_inside_root_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let err = publish(root.path(), 1, "s", &root.path().join("out")).unwrap_err();
    assert!(matches!(err, AdapterError::OutputInsideRoot));
    let err = publish(root.path(), 1, "Bad Name", &root.path().join("out")).unwrap_err();
    assert!(matches!(err, AdapterError::InvalidSourceName(_)));
}

#[test]
fn non_utf8_names_are_reported_and_skipped() {
    use std::os::unix::ffi::OsStrExt;
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    fs::write(root.path().join("good.dat"), b"ok").unwrap();
    let bad = std::ffi::OsStr::from_bytes(b"bad\xff.dat");
    fs::write(root.path().join(bad), b"bad").unwrap();
    let (published, report) = publish(root.path(), 1, "s", out.path()).unwrap();
    assert_eq!(published.catalog.entries.len(), 1);
    assert_eq!(report.skipped.len(), 1);
}

#[test]
fn unreadable_files_are_reported_and_skipped() {
    use std::os::unix::fs::PermissionsExt;
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    fs::write(root.path().join("good.dat"), b"ok").unwrap();
    let locked = root.path().join("locked.dat");
    fs::write(&locked, b"secret").unwrap();
    fs::set_permissions(&locked, fs::Permissions::from_mode(0o000)).unwrap();
    if fs::read(&locked).is_ok() {
        // running with CAP_DAC_OVERRIDE; permissions cannot make it unreadable
        return;
    }
    let (published, report) = publish(root.path(), 1, "s", out.path()).unwrap();
    assert_eq!(published.catalog.entries.len(), 1);
    assert_eq!(report.skipped[0].path, "locked.dat");
}

#[test]
fn serve_and_fetch_over_http() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let files = write_tree(&GenSpec::new(GenFormat::Dst1, 3, 4, 1), root.path()).unwrap();
    let before = tree_fingerprint(root.path());

    let (published, _) = publish(root.path(), 2, "site_b", out.path()).unwrap();
    let catalog_bytes = fs::read(out.path().join("catalog.json")).unwrap();
    let server = serve(Published::load(out.path()).unwrap());
    let url = server.url();

    let health: serde_json::Value = serde_json::from_str(
        &ureq::get(format!("{url}/api/v1/health"))
            .call()
            .unwrap()
            .body_mut()
            .read_to_string()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(health, serde_json::json!({"status": "ok"}));

    let served = ureq::get(format!("{url}/api/v1/catalog"))
        .call()
        .unwrap()
        .body_mut()
        .read_to_vec()
        .unwrap();
    assert_eq!(served, catalog_bytes);

    let client = CachingClient::http(&url, 1 << 20);
    assert_eq!(client.catalog().unwrap(), published.catalog);
    for (entry, file) in published.catalog.entries.iter().zip(&files) {
        assert_eq!(entry.path, file.path);
        assert_eq!(client.fetch(&entry.sha256).unwrap(), file.bytes);
    }
    let zero: Sha256Digest = "0".repeat(64).parse().unwrap();
    assert_eq!(client.fetch(&zero), Err(FetchError::NotFound(zero)));

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let status = agent
        .get(format!("{url}/api/v1/objects/not-a-digest"))
        .call()
        .unwrap()
        .status();
    assert_eq!(status.as_u16(), 400);

    drop(server);
    assert_eq!(tree_fingerprint(root.path()), before);
}

#[test]
fn tampering_on_the_wire_is_detected() {
    // an adapter that answers every object request with the wrong bytes
    let router = Router::new().route(
        "/api/v1/objects/{digest}",
        get(|UrlPath(_d): UrlPath<String>| async { b"tampered payload".to_vec() }),
    );
    let server = BackgroundServer::start(router, "127.0.0.1:0".parse().unwrap()).unwrap();
    let client = CachingClient::http(server.url(), 1 << 20);
    let d = Sha256Digest::of(b"original payload");
    assert!(matches!(
        client.fetch(&d),
        Err(FetchError::DigestMismatch { .. })
    ));
    assert!(!client.is_resident(&d));
}

#[test]
fn unreachable_adapter() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let client = CachingClient::http(format!("http://{addr}"), 1 << 20);
    assert!(matches!(client.catalog(), Err(FetchError::Unreachable(_))));
    assert!(matches!(
        client.fetch(&Sha256Digest::of(b"x")),
        Err(FetchError::Unreachable(_))
    ));
}

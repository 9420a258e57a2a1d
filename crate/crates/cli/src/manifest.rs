//! Run manifests: what was run, on which inputs, and the hash of every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dosage_ts::AlgoConfig;

use crate::{commands, read_json, thread_pool, Command, ReplayArgs, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub command: Command,
    pub argv: Vec<String>,
    pub seed: u64,
    /// Effective algorithm settings; replay uses this snapshot rather than
    /// re-reading the config file.
    pub config: AlgoConfig,
    pub corpus_sha256: Option<String>,
    pub inputs: BTreeMap<String, InputFile>,
    /// Output path relative to the output directory, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub jobs: usize,
    pub started_at: String,
    pub finished_at: String,
    pub replay_of: Option<PathBuf>,
}

impl RunManifest {
    pub fn out_dir(&self) -> &Path {
        match &self.command {
            Command::Replay(a) => &a.out,
            c => &c.common().expect("non-replay").out,
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Run a non-replay command, hash everything it wrote and save the manifest.
pub(crate) fn execute(
    command: Command,
    argv: Vec<String>,
    file_config: Option<AlgoConfig>,
    replay_of: Option<PathBuf>,
) -> Result<RunManifest> {
    let common = command.common().context("replay cannot be nested")?.clone();
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;

    let mut inputs = BTreeMap::new();
    for (role, path) in command.inputs() {
        let sha256 = sha256_file(path)?;
        inputs.insert(role.to_string(), InputFile { path: path.to_path_buf(), sha256 });
    }

    let started_at = chrono::Utc::now().to_rfc3339();
    let pool = thread_pool(common.jobs)?;
    let jobs = pool.current_num_threads();
    let executed = pool.install(|| commands::dispatch(&command, file_config, &common.out))?;

    let mut outputs = BTreeMap::new();
    for rel in &executed.outputs {
        outputs.insert(rel.clone(), sha256_file(&common.out.join(rel))?);
    }
    let corpus_sha256 = inputs
        .get("corpus")
        .map(|f| f.sha256.clone())
        .or_else(|| outputs.get(commands::CORPUS_FILE).cloned());

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: common.seed,
        command,
        argv,
        config: executed.config,
        corpus_sha256,
        inputs,
        outputs,
        jobs,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        replay_of,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(common.out.join(MANIFEST_FILE), text + "\n")?;
    Ok(manifest)
}

/// Re-run the command recorded in a manifest into a fresh directory and
/// fail unless every output hash matches.
pub(crate) fn replay(args: &ReplayArgs) -> Result<RunManifest> {
    let recorded: RunManifest = read_json(&args.manifest)?;
    for (role, input) in &recorded.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            bail!("{role} input {} changed since the recorded run", input.path.display());
        }
    }
    let mut command = recorded.command.clone();
    let common = command.common_mut().context("manifest records a replay")?;
    if std::path::absolute(&common.out)? == args.out {
        bail!("replay output directory must differ from the recorded one");
    }
    common.out = args.out.clone();
    if args.jobs.is_some() {
        common.jobs = args.jobs;
    }
    let file_config = common.config.as_ref().map(|_| recorded.config.clone());

    let fresh = execute(command, recorded.argv.clone(), file_config, Some(args.manifest.clone()))?;
    let mut mismatched = Vec::new();
    for (rel, sha) in &recorded.outputs {
        match fresh.outputs.get(rel) {
            Some(s) if s == sha => {}
            Some(_) => mismatched.push(format!("{rel} differs")),
            None => mismatched.push(format!("{rel} missing")),
        }
    }
    for rel in fresh.outputs.keys().filter(|r| !recorded.outputs.contains_key(*r)) {
        mismatched.push(format!("{rel} unexpected"));
    }
    if !mismatched.is_empty() {
        bail!("replay does not reproduce the recorded run: {}", mismatched.join(", "));
    }
    log::info!("replay reproduced {} outputs", fresh.outputs.len());
    Ok(fresh)
}

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use promptrevert::cli::Cli;
use promptrevert::commands;
use promptrevert::io::read_jsonl;
use promptrevert::run::{ResultRecord, RESULTS_FILE};
use tempfile::TempDir;

/// Small models and few epochs so a full command runs in well under a second.
pub const FAST_CONFIG: &str = "\
optimizer:
  max_epoch: 20
e2t:
  corpus_size: 60
  train:
    epochs_zero: 8
    epochs_corrector: 4
    hidden: 32
";

pub struct Workspace {
    pub dir: TempDir,
    pub config: PathBuf,
    pub fixtures: PathBuf,
}

impl Workspace {
    /// Config file plus a 10-image fixture directory.
    pub fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.yaml");
        fs::write(&path, config).unwrap();
        let fixtures = dir.path().join("fixtures");
        let ws = Self { dir, config: path, fixtures };
        assert_eq!(ws.run(&["fixtures", "--out", ws.fixtures.to_str().unwrap()]), 0);
        ws
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn captions(&self) -> PathBuf {
        self.fixtures.join("captions.json")
    }

    /// Run one subcommand with this workspace's config.
    pub fn run(&self, args: &[&str]) -> i32 {
        let mut argv = vec!["promptrevert", "--config", self.config.to_str().unwrap()];
        argv.extend_from_slice(args);
        commands::run(Cli::parse_from(argv))
    }

    pub fn invert(&self, images: &Path, out: &Path, extra: &[&str]) -> i32 {
        let mut args = vec![
            "invert",
            "--images",
            images.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--captions",
        ];
        let captions = self.captions();
        args.push(captions.to_str().unwrap());
        args.extend_from_slice(extra);
        self.run(&args)
    }
}

pub fn results(out: &Path) -> Vec<ResultRecord> {
    read_jsonl(&out.join(RESULTS_FILE)).unwrap()
}

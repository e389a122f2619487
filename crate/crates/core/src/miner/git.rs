// SPDX-License-Identifier: Apache-2.0

//! Thin adapter over the `git` executable.

use std::path::{Path, PathBuf};
use std::process::Command;

use super::MinerError;

#[derive(Clone, Debug)]
pub struct GitRepo {
    root: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Added,
    Deleted,
    Modified,
}

impl GitRepo {
    pub fn open(root: &Path) -> Result<Self, MinerError> {
        let repo = GitRepo {
            root: root.to_path_buf(),
        };
        repo.run(&["rev-parse", "--git-dir"])?;
        Ok(repo)
    }

    fn run(&self, args: &[&str]) -> Result<Vec<u8>, MinerError> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args(["-c", "core.quotepath=off"])
            .args(args)
            .output()
            .map_err(|e| MinerError::RepoAccess(format!("cannot run git: {e}")))?;
        if !out.status.success() {
            return Err(MinerError::RepoAccess(format!(
                "git {}: {}",
                args.join(" "),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(out.stdout)
    }

    fn run_text(&self, args: &[&str]) -> Result<String, MinerError> {
        String::from_utf8(self.run(args)?).map_err(|e| MinerError::RepoAccess(format!("git {}: {e}", args.join(" "))))
    }

    /// First-parent history of HEAD, oldest first.
    pub fn first_parent_history(&self) -> Result<Vec<String>, MinerError> {
        Ok(self
            .run_text(&["rev-list", "--first-parent", "--reverse", "HEAD"])?
            .lines()
            .map(str::to_string)
            .collect())
    }

    pub fn first_parent(&self, commit: &str) -> Result<Option<String>, MinerError> {
        let line = self.run_text(&["rev-list", "--parents", "-n", "1", commit])?;
        Ok(line.split_whitespace().nth(1).map(str::to_string))
    }

    pub fn message(&self, commit: &str) -> Result<String, MinerError> {
        self.run_text(&["log", "-1", "--format=%B", commit])
    }

    pub fn changed_files(&self, parent: &str, commit: &str) -> Result<Vec<(ChangeKind, String)>, MinerError> {
        let out = self.run_text(&["diff", "--name-status", "--no-renames", parent, commit])?;
        let mut v = Vec::new();
        for line in out.lines() {
            let mut it = line.splitn(2, '\t');
            let (Some(st), Some(path)) = (it.next(), it.next()) else {
                continue;
            };
            let kind = match st.chars().next() {
                Some('A') => ChangeKind::Added,
                Some('D') => ChangeKind::Deleted,
                _ => ChangeKind::Modified,
            };
            v.push((kind, path.to_string()));
        }
        Ok(v)
    }

    pub fn files_at(&self, commit: &str) -> Result<Vec<String>, MinerError> {
        Ok(self
            .run_text(&["ls-tree", "-r", "--name-only", commit])?
            .lines()
            .map(str::to_string)
            .collect())
    }

    pub fn show(&self, commit: &str, path: &str) -> Result<Vec<u8>, MinerError> {
        self.run(&["show", &format!("{commit}:{path}")])
    }
}

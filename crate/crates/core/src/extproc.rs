//! Line-delimited subprocess protocol for out-of-process verification.
//!
//! The client (this crate's generation loop) owns retrieval, drafting, and
//! acceptance; the subprocess owns the model and the sampling. One JSON
//! request per line on the subprocess's stdin, one JSON response per line on
//! its stdout. Both directions carry the mandatory version tag `"restv1"`.
//!
//! A reference server over an [`NgramModel`] is provided so the protocol can
//! be exercised end to end (`rest serve-lm` in the CLI wraps it).

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::draft::DraftBuffer;
use crate::reflm::NgramModel;
use crate::sampler::{SamplingConfig, SamplingStrategy};
use crate::token::TokenId;
use crate::verify::Verifier;
use crate::{Error, Result};

/// Mandatory protocol version tag.
pub const PROTOCOL_VERSION: &str = "restv1";

/// One verification request: evaluate the draft buffer against the context
/// and return the chosen token at the context end and at every buffer node.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VerifyRequest {
    pub version: String,
    pub context: Vec<TokenId>,
    /// Buffer tokens in buffer (breadth-first) order.
    pub buffer_tokens: Vec<TokenId>,
    /// Parent buffer index per node; `null` marks children of the root.
    pub parents: Vec<Option<usize>>,
    /// `"greedy"` or `"nucleus"`.
    pub strategy: String,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
    /// Absolute output position of the token decided at the context end.
    pub pos0: u64,
}

/// Chosen tokens in evaluation order: context end first, then buffer order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VerifyResponse {
    pub version: String,
    #[serde(default)]
    pub chosen: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl VerifyRequest {
    pub fn new(
        context: &[TokenId],
        buffer: &DraftBuffer,
        sampling: &SamplingConfig,
        pos0: u64,
    ) -> Self {
        VerifyRequest {
            version: PROTOCOL_VERSION.to_string(),
            context: context.to_vec(),
            buffer_tokens: buffer.tokens().to_vec(),
            parents: buffer.parents().to_vec(),
            strategy: match sampling.strategy {
                SamplingStrategy::Greedy => "greedy".to_string(),
                SamplingStrategy::Nucleus => "nucleus".to_string(),
            },
            temperature: sampling.temperature,
            top_p: sampling.top_p,
            seed: sampling.seed,
            pos0,
        }
    }

    fn sampling(&self) -> Result<SamplingConfig> {
        Ok(SamplingConfig {
            strategy: self.strategy.parse().map_err(Error::Protocol)?,
            top_p: self.top_p,
            temperature: self.temperature,
            seed: self.seed,
        })
    }

    fn buffer(&self) -> Result<DraftBuffer> {
        if self.buffer_tokens.len() != self.parents.len() {
            return Err(Error::Protocol(
                "buffer_tokens and parents lengths differ".into(),
            ));
        }
        let mut depths = Vec::with_capacity(self.parents.len());
        for (i, parent) in self.parents.iter().enumerate() {
            let depth = match parent {
                None => 1,
                Some(p) if *p < i => depths[*p] + 1,
                Some(p) => {
                    return Err(Error::Protocol(format!(
                        "parent {p} of node {i} does not precede it"
                    )))
                }
            };
            depths.push(depth);
        }
        Ok(DraftBuffer::from_parts(
            self.buffer_tokens.clone(),
            self.parents.clone(),
            depths,
        ))
    }
}

/// Serve verification requests over any line-based transport until EOF.
/// Malformed requests produce an error response instead of ending the loop.
pub fn serve<R: BufRead, W: Write>(model: &NgramModel, input: R, mut output: W) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match handle(model, &line) {
            Ok(chosen) => VerifyResponse {
                version: PROTOCOL_VERSION.to_string(),
                chosen,
                error: None,
            },
            Err(err) => VerifyResponse {
                version: PROTOCOL_VERSION.to_string(),
                chosen: Vec::new(),
                error: Some(err.to_string()),
            },
        };
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

fn handle(model: &NgramModel, line: &str) -> Result<Vec<TokenId>> {
    let request: VerifyRequest =
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad request: {e}")))?;
    if request.version != PROTOCOL_VERSION {
        return Err(Error::Protocol(format!(
            "unsupported protocol version {:?}",
            request.version
        )));
    }
    let buffer = request.buffer()?;
    let sampling = request.sampling()?;
    model.choose_tokens(&request.context, &buffer, &sampling, request.pos0)
}

/// Client side: spawns the verifier subprocess once and sends it one request
/// per forward pass. Requests are serialized through a mutex, so a shared
/// reference is usable from the generation loop like any local model.
pub struct ExtProcVerifier {
    io: Mutex<ChildIo>,
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ExtProcVerifier {
    /// Spawn `command` (whitespace-split program and arguments; no shell).
    pub fn spawn(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Protocol("empty verifier command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExtProcVerifier {
            io: Mutex::new(ChildIo {
                child,
                stdin,
                stdout,
            }),
        })
    }

    fn round_trip(&self, request: &VerifyRequest) -> Result<VerifyResponse> {
        let mut io = self.io.lock().expect("verifier mutex poisoned");
        serde_json::to_writer(&mut io.stdin, request)?;
        io.stdin.write_all(b"\n")?;
        io.stdin.flush()?;
        let mut line = String::new();
        if io.stdout.read_line(&mut line)? == 0 {
            return Err(Error::Protocol("verifier closed its output".into()));
        }
        serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("bad response: {e}")))
    }
}

impl Verifier for ExtProcVerifier {
    fn choose_tokens(
        &self,
        context: &[TokenId],
        buffer: &DraftBuffer,
        sampling: &SamplingConfig,
        pos0: u64,
    ) -> Result<Vec<TokenId>> {
        let request = VerifyRequest::new(context, buffer, sampling, pos0);
        let response = self.round_trip(&request)?;
        if response.version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "unsupported protocol version {:?}",
                response.version
            )));
        }
        if let Some(error) = response.error {
            return Err(Error::Protocol(error));
        }
        if response.chosen.len() != buffer.len() + 1 {
            return Err(Error::Protocol(format!(
                "verifier returned {} tokens for {} positions",
                response.chosen.len(),
                buffer.len() + 1
            )));
        }
        Ok(response.chosen)
    }
}

impl Drop for ExtProcVerifier {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draft::{build_trie, flatten, select_top_c};
    use crate::retrieval::ContinuationSet;
    use crate::token::ingest;

    fn model() -> NgramModel {
        NgramModel::train(&ingest(&[vec![0, 1, 2, 3, 0, 1, 2]], 4).unwrap(), 3)
    }

    fn buffer() -> DraftBuffer {
        let set = ContinuationSet {
            matched_suffix_len: 1,
            continuations: vec![vec![1, 2], vec![1, 3], vec![2]],
            truncated: false,
        };
        flatten(&select_top_c(&build_trie(&set), 64))
    }

    fn request() -> VerifyRequest {
        VerifyRequest::new(&[0, 1], &buffer(), &SamplingConfig::default(), 5)
    }

    #[test]
    fn request_and_response_round_trip_as_json_lines() {
        let req = request();
        let encoded = serde_json::to_string(&req).unwrap();
        assert!(encoded.contains("\"version\":\"restv1\""));
        assert_eq!(
            serde_json::from_str::<VerifyRequest>(&encoded).unwrap(),
            req
        );

        let resp = VerifyResponse {
            version: PROTOCOL_VERSION.into(),
            chosen: vec![1, 2, 3],
            error: None,
        };
        let encoded = serde_json::to_string(&resp).unwrap();
        assert!(!encoded.contains("error"));
        assert_eq!(
            serde_json::from_str::<VerifyResponse>(&encoded).unwrap(),
            resp
        );
    }

    #[test]
    fn serve_matches_local_choice() {
        let model = model();
        let req = request();
        let input = format!("{}\n", serde_json::to_string(&req).unwrap());
        let mut output = Vec::new();
        serve(&model, input.as_bytes(), &mut output).unwrap();
        let response: VerifyResponse = serde_json::from_slice(output.trim_ascii_end()).unwrap();
        assert_eq!(response.version, PROTOCOL_VERSION);
        assert_eq!(response.error, None);

        let local = model
            .choose_tokens(&[0, 1], &buffer(), &SamplingConfig::default(), 5)
            .unwrap();
        assert_eq!(response.chosen, local);
    }

    #[test]
    fn serve_rejects_wrong_version_but_keeps_running() {
        let model = model();
        let mut bad = request();
        bad.version = "restv0".into();
        let input = format!(
            "{}\n{}\n",
            serde_json::to_string(&bad).unwrap(),
            serde_json::to_string(&request()).unwrap()
        );
        let mut output = Vec::new();
        serve(&model, input.as_bytes(), &mut output).unwrap();
        let lines: Vec<&[u8]> = output
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
            .collect();
        assert_eq!(lines.len(), 2);
        let first: VerifyResponse = serde_json::from_slice(lines[0]).unwrap();
        assert!(first.error.unwrap().contains("version"));
        let second: VerifyResponse = serde_json::from_slice(lines[1]).unwrap();
        assert!(second.error.is_none());
    }

    #[test]
    fn serve_rejects_malformed_parent_links() {
        let model = model();
        let mut bad = request();
        bad.parents = vec![Some(5); bad.buffer_tokens.len()];
        let input = format!("{}\n", serde_json::to_string(&bad).unwrap());
        let mut output = Vec::new();
        serve(&model, input.as_bytes(), &mut output).unwrap();
        let response: VerifyResponse = serde_json::from_slice(output.trim_ascii_end()).unwrap();
        assert!(response.error.unwrap().contains("parent"));
    }
}

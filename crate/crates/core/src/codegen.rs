//! Emits a trained tree as if-then-else dispatcher source and runs GEMM
//! through either the tree or the emitted source.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::dataset::ClassIndex;
use crate::error::{Error, Result};
use crate::eval::{Selector, TreeModel};
use crate::kernels::{
    gemm_execute, is_legal, DeviceCaps, Element, KernelConfig, KernelFamily, Matrix, ProblemShape,
};
use crate::model::{features_of, DecisionTree, Feature, Features, Node};

pub const DISPATCH_FN: &str = "select_gemm_config";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Syntax {
    /// Self-contained C, for inspection and diffing.
    CLike,
    /// Rust, for compiling into a crate that depends on this library.
    Rust,
}

impl Syntax {
    pub fn extension(self) -> &'static str {
        match self {
            Syntax::CLike => "c",
            Syntax::Rust => "rs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatcherSource {
    pub text: String,
    pub syntax: Syntax,
    pub tree_fingerprint: String,
}

/// SHA-256 of the serialized tree.
pub fn tree_fingerprint(tree: &DecisionTree) -> Result<String> {
    Ok(crate::content_hash(tree.to_json()?.as_bytes()))
}

/// Shortest decimal that parses back to the same `f64`, always written as
/// a floating-point literal.
fn float_literal(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'E']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn var(feature: Feature) -> &'static str {
    match feature {
        Feature::M => "m",
        Feature::N => "n",
        Feature::K => "k",
    }
}

fn config_literal(cfg: &KernelConfig, syntax: Syntax) -> String {
    let args = format!(
        "{}, {}, {}, {}, {}, {}",
        cfg.mwg, cfg.nwg, cfg.kwg, cfg.mwi, cfg.nwi, cfg.kwi
    );
    match (syntax, cfg.family) {
        (Syntax::CLike, KernelFamily::Direct) => format!("make_config(GEMM_DIRECT, {args})"),
        (Syntax::CLike, KernelFamily::Indirect) => format!("make_config(GEMM_INDIRECT, {args})"),
        (Syntax::Rust, KernelFamily::Direct) => {
            format!("KernelConfig::from_parts(KernelFamily::Direct, {args})")
        }
        (Syntax::Rust, KernelFamily::Indirect) => {
            format!("KernelConfig::from_parts(KernelFamily::Indirect, {args})")
        }
    }
}

fn emit_node(
    tree: &DecisionTree,
    classes: &ClassIndex,
    syntax: Syntax,
    idx: usize,
    depth: usize,
    out: &mut String,
) -> Result<()> {
    let pad = "    ".repeat(depth);
    match tree.node(idx) {
        Node::Leaf { class_id, .. } => {
            let cfg = classes.config(*class_id).ok_or_else(|| {
                Error::Generation(format!("leaf class {class_id} has no configuration"))
            })?;
            match syntax {
                Syntax::CLike => writeln!(out, "{pad}return {};", config_literal(cfg, syntax)),
                Syntax::Rust => writeln!(out, "{pad}{}", config_literal(cfg, syntax)),
            }
            .unwrap();
        }
        Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            let cond = format!("{} <= {}", var(*feature), float_literal(*threshold));
            match syntax {
                Syntax::CLike => writeln!(out, "{pad}if ({cond}) {{").unwrap(),
                Syntax::Rust => writeln!(out, "{pad}if {cond} {{").unwrap(),
            }
            emit_node(tree, classes, syntax, *left, depth + 1, out)?;
            writeln!(out, "{pad}}} else {{").unwrap();
            emit_node(tree, classes, syntax, *right, depth + 1, out)?;
            writeln!(out, "{pad}}}").unwrap();
        }
    }
    Ok(())
}

/// Renders `tree` as a nested conditional returning full configurations.
/// Output is byte-identical for identical inputs.
pub fn emit_dispatcher(
    tree: &DecisionTree,
    classes: &ClassIndex,
    syntax: Syntax,
    provenance: Option<&str>,
) -> Result<DispatcherSource> {
    let fingerprint = tree_fingerprint(tree)?;
    let mut out = String::new();
    let header = [
        "Generated by adaptgemm; do not edit.".to_string(),
        format!("tree-fingerprint: {fingerprint}"),
        format!("provenance: {}", provenance.unwrap_or("unspecified")),
        format!("toolkit-version: {}", crate::VERSION),
    ];
    match syntax {
        Syntax::CLike => {
            out.push_str("/*\n");
            for line in &header {
                writeln!(out, " * {line}").unwrap();
            }
            out.push_str(" */\n\n");
            out.push_str(
                "typedef enum { GEMM_DIRECT = 0, GEMM_INDIRECT = 1 } gemm_family;\n\n\
                 typedef struct {\n    gemm_family family;\n    long mwg, nwg, kwg, mwi, nwi, kwi;\n} gemm_config;\n\n\
                 static gemm_config make_config(gemm_family family, long mwg, long nwg, long kwg,\n\
                 \x20                              long mwi, long nwi, long kwi)\n{\n\
                 \x20   gemm_config c = {family, mwg, nwg, kwg, mwi, nwi, kwi};\n    return c;\n}\n\n",
            );
            writeln!(out, "gemm_config {DISPATCH_FN}(long m, long n, long k)\n{{").unwrap();
            out.push_str("    (void)m; (void)n; (void)k;\n");
            emit_node(tree, classes, syntax, 0, 1, &mut out)?;
            out.push_str("}\n");
        }
        Syntax::Rust => {
            for line in &header {
                writeln!(out, "// {line}").unwrap();
            }
            out.push('\n');
            out.push_str("#[allow(unused_variables, clippy::collapsible_else_if, clippy::excessive_precision)]\n");
            writeln!(
                out,
                "pub fn {DISPATCH_FN}(m: usize, n: usize, k: usize) -> KernelConfig {{"
            )
            .unwrap();
            out.push_str("    let (m, n, k) = (m as f64, n as f64, k as f64);\n");
            emit_node(tree, classes, syntax, 0, 1, &mut out)?;
            out.push_str("}\n");
        }
    }
    Ok(DispatcherSource {
        text: out,
        syntax,
        tree_fingerprint: fingerprint,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(String),
    Le,
    Punct(char),
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                i += 1;
            }
            i += 2;
        } else if c == '#' {
            // Attributes such as `#[allow(...)]`.
            let mut level = 0;
            i += 1;
            while i < chars.len() {
                match chars[i] {
                    '[' => level += 1,
                    ']' => {
                        level -= 1;
                        if level == 0 {
                            i += 1;
                            break;
                        }
                    }
                    _ => {}
                }
                i += 1;
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric()
                    || chars[i] == '_'
                    || (chars[i] == ':' && chars.get(i + 1) == Some(&':'))
                    || (chars[i] == ':' && i > 0 && chars[i - 1] == ':'))
            {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '+' || d == '-') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(Token::Number(chars[start..i].iter().collect()));
        } else if c == '<' && chars.get(i + 1) == Some(&'=') {
            out.push(Token::Le);
            i += 2;
        } else {
            out.push(Token::Punct(c));
            i += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum DispatchNode {
    Split {
        feature: Feature,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(KernelConfig),
}

/// Emitted dispatcher source parsed back into an evaluable form.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledDispatcher {
    nodes: Vec<DispatchNode>,
    pub fingerprint: Option<String>,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    nodes: Vec<DispatchNode>,
}

impl Parser {
    fn err(&self, msg: &str) -> Error {
        Error::Format(format!("dispatcher source, token {}: {msg}", self.pos))
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token> {
        let t = self.tokens.get(self.pos).cloned().ok_or_else(|| self.err("unexpected end"))?;
        self.pos += 1;
        Ok(t)
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Token::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<()> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{c}`")))
        }
    }

    fn eat_ident(&mut self, name: &str) -> bool {
        if matches!(self.peek(), Some(Token::Ident(s)) if s == name) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn integer(&mut self) -> Result<usize> {
        match self.next()? {
            Token::Number(s) => s.parse().map_err(|_| self.err(&format!("bad integer {s}"))),
            _ => Err(self.err("expected integer")),
        }
    }

    /// Positions the cursor just inside the dispatch function body.
    fn enter_body(&mut self) -> Result<()> {
        let at = self
            .tokens
            .iter()
            .position(|t| matches!(t, Token::Ident(s) if s == DISPATCH_FN))
            .ok_or_else(|| self.err(&format!("no `{DISPATCH_FN}` function")))?;
        self.pos = at + 1;
        while !self.eat_punct('{') {
            self.next()?;
        }
        // Skip prologue statements (`let ...;`, `(void)m; ...`).
        loop {
            match self.peek() {
                Some(Token::Ident(s)) if s == "let" => {}
                Some(Token::Punct('(')) => {}
                _ => return Ok(()),
            }
            while !self.eat_punct(';') {
                self.next()?;
            }
        }
    }

    fn node(&mut self) -> Result<usize> {
        let slot = self.nodes.len();
        self.nodes.push(DispatchNode::Leaf(KernelConfig::direct(1, 1, 1, 1, 1)));
        if self.eat_ident("if") {
            let paren = self.eat_punct('(');
            let feature = match self.next()? {
                Token::Ident(s) if s == "m" => Feature::M,
                Token::Ident(s) if s == "n" => Feature::N,
                Token::Ident(s) if s == "k" => Feature::K,
                _ => return Err(self.err("expected m, n or k")),
            };
            if self.next()? != Token::Le {
                return Err(self.err("expected `<=`"));
            }
            let threshold = match self.next()? {
                Token::Number(s) => s.parse::<f64>().map_err(|_| self.err(&format!("bad number {s}")))?,
                _ => return Err(self.err("expected threshold")),
            };
            if paren {
                self.expect_punct(')')?;
            }
            self.expect_punct('{')?;
            let left = self.node()?;
            self.expect_punct('}')?;
            if !self.eat_ident("else") {
                return Err(self.err("expected `else`"));
            }
            self.expect_punct('{')?;
            let right = self.node()?;
            self.expect_punct('}')?;
            self.nodes[slot] = DispatchNode::Split {
                feature,
                threshold,
                left,
                right,
            };
        } else {
            self.eat_ident("return");
            match self.next()? {
                Token::Ident(s) if s == "make_config" || s == "KernelConfig::from_parts" => {}
                _ => return Err(self.err("expected a configuration literal")),
            }
            self.expect_punct('(')?;
            let family = match self.next()? {
                Token::Ident(s) if s == "GEMM_DIRECT" || s == "KernelFamily::Direct" => KernelFamily::Direct,
                Token::Ident(s) if s == "GEMM_INDIRECT" || s == "KernelFamily::Indirect" => {
                    KernelFamily::Indirect
                }
                _ => return Err(self.err("expected a kernel family")),
            };
            let mut params = [0usize; 6];
            for p in params.iter_mut() {
                self.expect_punct(',')?;
                *p = self.integer()?;
            }
            self.expect_punct(')')?;
            self.eat_punct(';');
            let [mwg, nwg, kwg, mwi, nwi, kwi] = params;
            self.nodes[slot] =
                DispatchNode::Leaf(KernelConfig::from_parts(family, mwg, nwg, kwg, mwi, nwi, kwi));
        }
        Ok(slot)
    }
}

fn header_fingerprint(text: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.split("tree-fingerprint: ").nth(1))
        .map(|s| s.trim().to_string())
}

impl CompiledDispatcher {
    pub fn parse(source: &DispatcherSource) -> Result<Self> {
        Self::parse_text(&source.text)
    }

    /// Parses either emitted syntax.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut p = Parser {
            tokens: tokenize(text)?,
            pos: 0,
            nodes: Vec::new(),
        };
        p.enter_body()?;
        p.node()?;
        p.expect_punct('}')?;
        Ok(Self {
            nodes: p.nodes,
            fingerprint: header_fingerprint(text),
        })
    }

    pub fn select_features(&self, features: &Features) -> KernelConfig {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                DispatchNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if features[feature.index()] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                DispatchNode::Leaf(cfg) => return *cfg,
            }
        }
    }

    pub fn branch_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, DispatchNode::Split { .. }))
            .count()
    }
}

impl Selector for CompiledDispatcher {
    fn select(&self, shape: &ProblemShape) -> Result<KernelConfig> {
        Ok(self.select_features(&features_of(shape)))
    }
}

/// Training shapes plus boundary probes around every threshold.
///
/// For each internal node a base point is chosen inside the node's region;
/// each feature is then set to `floor(t) - 1`, `floor(t)`, `ceil(t)` and
/// `ceil(t) + 1` for the node's threshold `t`.
pub fn probe_shapes(tree: &DecisionTree, training: &[ProblemShape]) -> Vec<ProblemShape> {
    let mut out: Vec<ProblemShape> = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |dims: [usize; 3], out: &mut Vec<ProblemShape>| {
        if dims.iter().all(|&d| d >= 1) && seen.insert(dims) {
            out.push(ProblemShape::new(dims[0], dims[1], dims[2]).unwrap());
        }
    };
    for s in training {
        push([s.m, s.n, s.k], &mut out);
    }

    // (node, exclusive lower bounds, inclusive upper bounds)
    let mut stack = vec![(0usize, [0.0f64; 3], [f64::INFINITY; 3])];
    while let Some((idx, lo, hi)) = stack.pop() {
        let Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } = *tree.node(idx)
        else {
            continue;
        };
        let mut base = [1usize; 3];
        let mut reachable = true;
        for f in 0..3 {
            let v = (lo[f].floor() + 1.0).max(1.0);
            if v > hi[f] {
                reachable = false;
            }
            base[f] = v as usize;
        }
        if reachable {
            let floor = threshold.floor();
            let ceil = threshold.ceil();
            for f in 0..3 {
                for v in [floor - 1.0, floor, ceil, ceil + 1.0] {
                    if (1.0..1e15).contains(&v) {
                        let mut p = base;
                        p[f] = v as usize;
                        push(p, &mut out);
                    }
                }
            }
        }
        let f = feature.index();
        let mut left_hi = hi;
        left_hi[f] = left_hi[f].min(threshold);
        let mut right_lo = lo;
        right_lo[f] = right_lo[f].max(threshold);
        stack.push((right, right_lo, hi));
        stack.push((left, lo, left_hi));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundTrip {
    Equivalent { probes: usize },
    Counterexample {
        shape: ProblemShape,
        expected: KernelConfig,
        emitted: KernelConfig,
    },
    Unparseable(String),
}

impl RoundTrip {
    pub fn passed(&self) -> bool {
        matches!(self, RoundTrip::Equivalent { .. })
    }
}

/// Checks that `source` selects the same configuration as `model` on every
/// probe; the first disagreement is returned as a counterexample.
pub fn roundtrip_check(model: &TreeModel, source: &DispatcherSource, probes: &[ProblemShape]) -> RoundTrip {
    let compiled = match CompiledDispatcher::parse(source) {
        Ok(c) => c,
        Err(e) => return RoundTrip::Unparseable(e.to_string()),
    };
    for shape in probes {
        let emitted = compiled.select_features(&features_of(shape));
        let expected = match model.select(shape) {
            Ok(c) => c,
            Err(e) => return RoundTrip::Unparseable(e.to_string()),
        };
        if expected != emitted {
            return RoundTrip::Counterexample {
                shape: *shape,
                expected,
                emitted,
            };
        }
    }
    RoundTrip::Equivalent {
        probes: probes.len(),
    }
}

#[derive(Debug, Clone)]
pub struct DispatchOutcome<T> {
    pub output: Matrix<T>,
    pub selected: KernelConfig,
    /// The predicted config was illegal for the device and the fallback ran.
    pub fell_back: bool,
    pub selection_time: Duration,
    pub execution_time: Duration,
}

/// GEMM entry point that picks its kernel per call.
pub struct AdaptiveGemm<S> {
    selector: S,
    caps: DeviceCaps,
    fallback: KernelConfig,
}

impl<S: Selector> AdaptiveGemm<S> {
    /// `fallback` (normally the tuned Direct default) runs whenever the
    /// selector returns a configuration the device cannot execute.
    pub fn new(selector: S, caps: DeviceCaps, fallback: KernelConfig) -> Result<Self> {
        crate::kernels::check_legal(&fallback, &caps)?;
        Ok(Self {
            selector,
            caps,
            fallback,
        })
    }

    pub fn selector(&self) -> &S {
        &self.selector
    }

    pub fn select(&self, shape: &ProblemShape) -> Result<(KernelConfig, bool)> {
        let cfg = self.selector.select(shape)?;
        if is_legal(&cfg, &self.caps) {
            Ok((cfg, false))
        } else {
            log::warn!("selected {cfg} is illegal on this device; using {}", self.fallback);
            Ok((self.fallback, true))
        }
    }

    pub fn run<T: Element>(
        &self,
        shape: &ProblemShape,
        a: &Matrix<T>,
        b: &Matrix<T>,
        c: &Matrix<T>,
    ) -> Result<DispatchOutcome<T>> {
        let start = Instant::now();
        let (selected, fell_back) = self.select(shape)?;
        let selection_time = start.elapsed();
        let (output, execution_time) = gemm_execute(shape, &selected, &self.caps, a, b, c)?;
        Ok(DispatchOutcome {
            output,
            selected,
            fell_back,
            selection_time,
            execution_time,
        })
    }
}

/// One-shot form of [`AdaptiveGemm::run`].
#[allow(clippy::too_many_arguments)]
pub fn dispatch_and_run<T: Element>(
    selector: &dyn Selector,
    shape: &ProblemShape,
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
    caps: &DeviceCaps,
    fallback: &KernelConfig,
) -> Result<DispatchOutcome<T>> {
    AdaptiveGemm::new(selector, *caps, *fallback)?.run(shape, a, b, c)
}

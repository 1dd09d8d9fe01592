// Generated by adaptgemm; do not edit.
// tree-fingerprint: c9a67445b69f5d782aa21d4019401b35088dde7bec2777d5e3fc79dff53f39ec
// provenance: fixture
// toolkit-version: 0.1.0

#[allow(unused_variables, clippy::collapsible_else_if, clippy::excessive_precision)]
pub fn select_gemm_config(m: usize, n: usize, k: usize) -> KernelConfig {
    let (m, n, k) = (m as f64, n as f64, k as f64);
    if m <= 192.0 {
        KernelConfig::from_parts(KernelFamily::Direct, 16, 16, 8, 2, 2, 1)
    } else {
        if k <= 768.5 {
            KernelConfig::from_parts(KernelFamily::Indirect, 64, 32, 16, 4, 8, 2)
        } else {
            KernelConfig::from_parts(KernelFamily::Indirect, 32, 32, 32, 4, 4, 1)
        }
    }
}

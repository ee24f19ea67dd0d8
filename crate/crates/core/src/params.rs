//! Named parameter traversal shared by weight containers, freeze masks and the optimizer.

/// Visits every parameter of a weight structure under a stable dotted name.
pub trait Parameters<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut P));

    fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name, p)));
        out
    }

    fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

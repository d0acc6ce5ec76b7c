use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Sizes of the disjoint parts carved out of one corpus.
///
/// `attack_members_known` is drawn from inside `d_tr` (members the attacker
/// knows); every other part is disjoint from all the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    pub d_tr: usize,
    pub x_ref_pool: usize,
    pub d_test: usize,
    pub shadow: usize,
    pub attack_members_known: usize,
    pub attack_nonmembers_known: usize,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            seed: 1,
            d_tr: 10_000,
            x_ref_pool: 30_000,
            d_test: 5_000,
            shadow: 10_000,
            attack_members_known: 5_000,
            attack_nonmembers_known: 5_000,
        }
    }
}

impl SplitPlan {
    /// Number of corpus rows the plan consumes.
    pub fn required(&self) -> usize {
        self.d_tr + self.x_ref_pool + self.d_test + self.shadow + self.attack_nonmembers_known
    }

    pub fn validate(&self, available: usize) -> Result<()> {
        if self.d_tr == 0 {
            return Err(Error::invalid("d_tr must be nonempty"));
        }
        if self.attack_members_known > self.d_tr / 2 {
            return Err(Error::invalid(format!(
                "attack_members_known ({}) exceeds half of d_tr ({})",
                self.attack_members_known, self.d_tr
            )));
        }
        let need = self.required();
        if need > available {
            return Err(Error::invalid(format!(
                "split plan needs {need} samples but only {available} are available (short by {})",
                need - available
            )));
        }
        Ok(())
    }
}

/// Corpus row indices of every part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub d_tr: Vec<usize>,
    pub x_ref_pool: Vec<usize>,
    pub d_test: Vec<usize>,
    pub shadow: Vec<usize>,
    pub attack_members_known: Vec<usize>,
    pub attack_nonmembers_known: Vec<usize>,
    pub eval_members: Vec<usize>,
    pub eval_nonmembers: Vec<usize>,
}

impl SplitIndices {
    /// Every part with its file name, in a fixed order.
    pub fn named(&self) -> [(&'static str, &[usize]); 8] {
        [
            ("d_tr", &self.d_tr),
            ("x_ref_pool", &self.x_ref_pool),
            ("d_test", &self.d_test),
            ("shadow", &self.shadow),
            ("attack_members_known", &self.attack_members_known),
            ("attack_nonmembers_known", &self.attack_nonmembers_known),
            ("eval_members", &self.eval_members),
            ("eval_nonmembers", &self.eval_nonmembers),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("part,row\n");
        for (name, rows) in self.named() {
            for r in rows {
                s.push_str(&format!("{name},{r}\n"));
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut out = SplitIndices {
            d_tr: Vec::new(),
            x_ref_pool: Vec::new(),
            d_test: Vec::new(),
            shadow: Vec::new(),
            attack_members_known: Vec::new(),
            attack_nonmembers_known: Vec::new(),
            eval_members: Vec::new(),
            eval_nonmembers: Vec::new(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "part,row")) => {}
            _ => return Err(Error::parse(1, "expected header `part,row`")),
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (name, row) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(i + 1, "expected `part,row`"))?;
            let row: usize = row
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad row index `{row}`")))?;
            let part = match name {
                "d_tr" => &mut out.d_tr,
                "x_ref_pool" => &mut out.x_ref_pool,
                "d_test" => &mut out.d_test,
                "shadow" => &mut out.shadow,
                "attack_members_known" => &mut out.attack_members_known,
                "attack_nonmembers_known" => &mut out.attack_nonmembers_known,
                "eval_members" => &mut out.eval_members,
                "eval_nonmembers" => &mut out.eval_nonmembers,
                other => return Err(Error::parse(i + 1, format!("unknown split part `{other}`"))),
            };
            part.push(row);
        }
        Ok(out)
    }
}

/// The named parts of a split.
///
/// `x_ref_pool` keeps its labels for validation experiments; the
/// distillation pipeline only ever sees [`Dataset::unlabeled`] of it.
/// Evaluation members are the members of `d_tr` unknown to the attacker,
/// evaluation non-members are drawn from `d_test`, and both are truncated to
/// the same size.
#[derive(Debug, Clone)]
pub struct SplitParts {
    pub indices: SplitIndices,
    pub d_tr: Dataset,
    pub x_ref_pool: Dataset,
    pub d_test: Dataset,
    pub shadow: Dataset,
    pub attack_members_known: Dataset,
    pub attack_nonmembers_known: Dataset,
    pub eval_members: Dataset,
    pub eval_nonmembers: Dataset,
}

/// Seeded shuffle of the corpus followed by consecutive carving.
pub fn split(data: &Dataset, plan: &SplitPlan) -> Result<SplitParts> {
    plan.validate(data.len())?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));

    let mut cursor = 0;
    let mut take = |n: usize| {
        let part = order[cursor..cursor + n].to_vec();
        cursor += n;
        part
    };
    let d_tr = take(plan.d_tr);
    let x_ref_pool = take(plan.x_ref_pool);
    let d_test = take(plan.d_test);
    let shadow = take(plan.shadow);
    let attack_nonmembers_known = take(plan.attack_nonmembers_known);

    let attack_members_known = d_tr[..plan.attack_members_known].to_vec();
    let unknown = &d_tr[plan.attack_members_known..];
    let n_eval = unknown.len().min(d_test.len());
    let eval_members = unknown[..n_eval].to_vec();
    let eval_nonmembers = d_test[..n_eval].to_vec();

    let indices = SplitIndices {
        d_tr,
        x_ref_pool,
        d_test,
        shadow,
        attack_members_known,
        attack_nonmembers_known,
        eval_members,
        eval_nonmembers,
    };
    Ok(assemble(data, indices))
}

/// Rebuilds the parts of an earlier split of `data` from its indices.
pub fn parts_from_indices(data: &Dataset, indices: SplitIndices) -> Result<SplitParts> {
    if let Some((name, &bad)) = indices
        .named()
        .into_iter()
        .find_map(|(name, part)| part.iter().find(|&&i| i >= data.len()).map(|i| (name, i)))
    {
        return Err(Error::invalid(format!(
            "split part {name} refers to row {bad}, corpus has {} rows",
            data.len()
        )));
    }
    Ok(assemble(data, indices))
}

fn assemble(data: &Dataset, indices: SplitIndices) -> SplitParts {
    SplitParts {
        d_tr: data.subset(&indices.d_tr),
        x_ref_pool: data.subset(&indices.x_ref_pool),
        d_test: data.subset(&indices.d_test),
        shadow: data.subset(&indices.shadow),
        attack_members_known: data.subset(&indices.attack_members_known),
        attack_nonmembers_known: data.subset(&indices.attack_nonmembers_known),
        eval_members: data.subset(&indices.eval_members),
        eval_nonmembers: data.subset(&indices.eval_nonmembers),
        indices,
    }
}

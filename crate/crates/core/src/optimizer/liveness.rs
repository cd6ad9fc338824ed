//! Backward register liveness over a function's control-flow graph.

use std::collections::{BTreeSet, HashMap};

use crate::ir::{Instruction, IrFunction, Reg};

pub(crate) type RegSet = BTreeSet<Reg>;

pub(crate) struct Liveness {
    live_out: Vec<RegSet>,
    ignore_ret: bool,
}

fn uses(inst: &Instruction, ignore_ret: bool) -> Vec<Reg> {
    if ignore_ret && matches!(inst, Instruction::Ret(_)) {
        Vec::new()
    } else {
        inst.uses()
    }
}

fn step_back(live: &mut RegSet, inst: &Instruction, ignore_ret: bool) {
    if let Some(d) = inst.def() {
        live.remove(&d);
    }
    live.extend(uses(inst, ignore_ret));
}

impl Liveness {
    /// With `ignore_ret`, the operand of `ret` does not count as a use.
    pub(crate) fn compute(f: &IrFunction, ignore_ret: bool) -> Self {
        let index: HashMap<&str, usize> = f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
        let succs: Vec<Vec<usize>> = f
            .blocks
            .iter()
            .map(|b| b.instructions.iter().flat_map(|i| i.successors()).filter_map(|l| index.get(l).copied()).collect())
            .collect();
        let n = f.blocks.len();
        let mut live_in = vec![RegSet::new(); n];
        let mut live_out = vec![RegSet::new(); n];
        let mut changed = true;
        while changed {
            changed = false;
            for b in (0..n).rev() {
                let out: RegSet = succs[b].iter().flat_map(|&s| live_in[s].iter().copied()).collect();
                let mut live = out.clone();
                for inst in f.blocks[b].instructions.iter().rev() {
                    step_back(&mut live, inst, ignore_ret);
                }
                if live != live_in[b] || out != live_out[b] {
                    live_in[b] = live;
                    live_out[b] = out;
                    changed = true;
                }
            }
        }
        Liveness { live_out, ignore_ret }
    }

    /// Registers live immediately after instruction `index` of block `block`.
    pub(crate) fn live_after(&self, f: &IrFunction, block: usize, index: usize) -> RegSet {
        let mut live = self.live_out[block].clone();
        for inst in f.blocks[block].instructions[index + 1..].iter().rev() {
            step_back(&mut live, inst, self.ignore_ret);
        }
        live
    }

    /// Registers live on entry to the function.
    pub(crate) fn live_in_entry(&self, f: &IrFunction) -> RegSet {
        let mut live = self.live_out[0].clone();
        for inst in f.blocks[0].instructions.iter().rev() {
            step_back(&mut live, inst, self.ignore_ret);
        }
        live
    }
}

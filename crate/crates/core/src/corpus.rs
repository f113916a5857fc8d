//! Bundled benchmark programs. Each one exercises a particular stage of the
//! toolchain and comes with sample inputs plus the input domain used for
//! randomized testing.

/// A corpus program in assembly form.
#[derive(Clone, Copy, Debug)]
pub struct CorpusProgram {
    pub name: &'static str,
    pub about: &'static str,
    pub source: &'static str,
    /// Number of input words one run consumes.
    pub arity: usize,
    /// Inclusive domain of each input word, as signed values.
    pub range: (i32, i32),
    pub samples: &'static [&'static [u32]],
    /// Decompilation is expected to fail with an indirect jump.
    pub indirect: bool,
}

pub const CONST_PRINT: CorpusProgram = CorpusProgram {
    name: "const_print",
    about: "prints the constant 7",
    source: "
main:   addi $4, $0, 7
        addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 0,
    range: (0, 0),
    samples: &[&[]],
    indirect: false,
};

pub const STRAIGHT_LINE: CorpusProgram = CorpusProgram {
    name: "straight_line",
    about: "register moves through add-zero idioms feeding mixed arithmetic",
    source: "
main:   addi $2, $0, 5
        syscall
        addu $8, $2, $0
        addi $2, $0, 5
        syscall
        addiu $9, $2, 0
        add  $10, $8, $9
        sub  $11, $8, $9
        andi $12, $10, 0xff
        sll  $13, $11, 2
        sra  $14, $13, 1
        xor  $15, $12, $14
        slt  $24, $8, $9
        nor  $25, $10, $0
        srl  $25, $25, 28
        or   $4, $15, $0
        addi $2, $0, 1
        syscall
        or   $4, $24, $0
        syscall
        or   $4, $25, $0
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 2,
    range: (i32::MIN, i32::MAX),
    samples: &[&[3, 4], &[100, 0xffff_fff6], &[0x7fff_ffff, 1]],
    indirect: false,
};

pub const UNROLLED_SUM: CorpusProgram = CorpusProgram {
    name: "unrolled_sum",
    about: "array sum unrolled four times; the accumulator starts at the input",
    source: "
        .data 0x10000000
arr:    .word 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16
        .text
main:   addi $2, $0, 5
        syscall
        or   $9, $2, $0
        lui  $8, %hi(arr)
        ori  $8, $8, %lo(arr)
        addi $10, $8, 64
loop:   lw   $11, 0($8)
        add  $9, $9, $11
        lw   $11, 4($8)
        add  $9, $9, $11
        lw   $11, 8($8)
        add  $9, $9, $11
        lw   $11, 12($8)
        add  $9, $9, $11
        addi $8, $8, 16
        bne  $8, $10, loop
        or   $4, $9, $0
        addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 1,
    range: (i32::MIN, i32::MAX),
    samples: &[&[0], &[1000], &[0xffff_ff00]],
    indirect: false,
};

pub const DOT_PRODUCT: CorpusProgram = CorpusProgram {
    name: "dot_product",
    about: "dot product of the first n elements of two fixed vectors",
    source: "
        .data 0x10000000
va:     .word 3, -1, 4, 1, -5, 9, 2, 6
vb:     .word 2, 7, -1, 8, 2, 8, -1, 8
        .text
main:   addi $2, $0, 5
        syscall
        or   $10, $2, $0
        lui  $8, %hi(va)
        ori  $8, $8, %lo(va)
        lui  $9, %hi(vb)
        ori  $9, $9, %lo(vb)
        addi $11, $0, 0
        addi $12, $0, 0
loop:   slt  $1, $11, $10
        beq  $1, $0, done
        sll  $13, $11, 2
        add  $14, $8, $13
        lw   $15, 0($14)
        add  $14, $9, $13
        lw   $24, 0($14)
        mul  $25, $15, $24
        add  $12, $12, $25
        addi $11, $11, 1
        j    loop
done:   or   $4, $12, $0
        addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 1,
    range: (0, 8),
    samples: &[&[8], &[0], &[3]],
    indirect: false,
};

pub const FIR_FILTER: CorpusProgram = CorpusProgram {
    name: "fir_filter",
    about: "four-tap FIR filter with the tap loop unrolled; the bias is the input",
    source: "
        .data 0x10000000
taps:   .word 1, 3, 3, 1
xs:     .word 5, -2, 7, 0, 4, 4, -3, 8, 1, 2, 9, -6
        .text
main:   addi $2, $0, 5
        syscall
        or   $16, $2, $0
        lui  $17, %hi(taps)
        ori  $17, $17, %lo(taps)
        lui  $8, %hi(xs)
        ori  $8, $8, %lo(xs)
        addi $18, $8, 36
loop:   or   $9, $16, $0
        lw   $10, 0($17)
        lw   $11, 0($8)
        mul  $12, $10, $11
        add  $9, $9, $12
        lw   $10, 4($17)
        lw   $11, 4($8)
        mul  $12, $10, $11
        add  $9, $9, $12
        lw   $10, 8($17)
        lw   $11, 8($8)
        mul  $12, $10, $11
        add  $9, $9, $12
        lw   $10, 12($17)
        lw   $11, 12($8)
        mul  $12, $10, $11
        add  $9, $9, $12
        or   $4, $9, $0
        addi $2, $0, 1
        syscall
        addi $8, $8, 4
        bne  $8, $18, loop
        addi $2, $0, 10
        syscall
",
    arity: 1,
    range: (-1000, 1000),
    samples: &[&[0], &[10], &[0xffff_fffb]],
    indirect: false,
};

pub const MUL_CONST: CorpusProgram = CorpusProgram {
    name: "mul_const",
    about: "multiplications by constants written as shift/add chains",
    source: "
main:   addi $2, $0, 5
        syscall
        or   $8, $2, $0
        addi $2, $0, 5
        syscall
        or   $16, $2, $0
        sll  $9, $8, 3
        sll  $10, $8, 1
        add  $11, $9, $10
        or   $4, $11, $0
        addi $2, $0, 1
        syscall
        sll  $9, $8, 3
        sub  $12, $9, $8
        or   $4, $12, $0
        syscall
        sll  $9, $8, 6
        sll  $10, $8, 5
        add  $9, $9, $10
        sll  $10, $8, 2
        add  $13, $9, $10
        or   $4, $13, $0
        syscall
        sll  $14, $8, 2
        or   $4, $14, $0
        syscall
        addi $17, $0, 0
        addi $18, $0, 0
        blez $16, done
loop:   add  $19, $17, $8
        sll  $20, $19, 2
        add  $20, $20, $19
        add  $18, $18, $20
        sll  $21, $19, 3
        sub  $21, $21, $19
        xor  $18, $18, $21
        addi $17, $17, 1
        bne  $17, $16, loop
done:   or   $4, $18, $0
        addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 2,
    range: (0, 40),
    samples: &[&[3, 5], &[0, 0], &[17, 40]],
    indirect: false,
};

pub const SPILL_PROC: CorpusProgram = CorpusProgram {
    name: "spill_proc",
    about: "a procedure saving three callee-saved registers in stack slots",
    source: "
main:   addi $2, $0, 5
        syscall
        or   $16, $2, $0
        addi $2, $0, 5
        syscall
        or   $17, $2, $0
        or   $4, $16, $0
        or   $5, $17, $0
        jal  mix
        or   $4, $2, $0
        addi $2, $0, 1
        syscall
        or   $4, $16, $0
        syscall
        or   $4, $17, $0
        syscall
        addi $2, $0, 10
        syscall
mix:    addi $29, $29, -12
        sw   $16, 0($29)
        sw   $17, 4($29)
        sw   $18, 8($29)
        add  $16, $4, $5
        sub  $17, $4, $5
        mul  $18, $16, $17
        add  $2, $18, $16
        lw   $16, 0($29)
        lw   $17, 4($29)
        lw   $18, 8($29)
        addi $29, $29, 12
        jr   $31
",
    arity: 2,
    range: (i32::MIN, i32::MAX),
    samples: &[&[7, 3], &[0, 0], &[0x8000_0000, 5]],
    indirect: false,
};

pub const IF_ELSE: CorpusProgram = CorpusProgram {
    name: "if_else",
    about: "an if/else diamond: negate negative inputs, double the rest",
    source: "
main:   addi $2, $0, 5
        syscall
        slt  $1, $2, $0
        beq  $1, $0, pos
        sub  $9, $0, $2
        j    join
pos:    sll  $9, $2, 1
join:   or   $4, $9, $0
        addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 1,
    range: (i32::MIN, i32::MAX),
    samples: &[&[5], &[0xffff_fffd], &[0]],
    indirect: false,
};

pub const NESTED_LOOPS: CorpusProgram = CorpusProgram {
    name: "nested_loops",
    about: "two nested counted loops with a conditional in the inner body",
    source: "
main:   addi $2, $0, 5
        syscall
        or   $16, $2, $0
        addi $8, $0, 0
        addi $10, $0, 0
outer:  addi $9, $0, 0
inner:  mul  $11, $8, $9
        andi $12, $11, 1
        beq  $12, $0, even
        add  $10, $10, $11
        j    next
even:   sub  $10, $10, $9
next:   addi $9, $9, 1
        slt  $1, $9, $16
        bne  $1, $0, inner
        addi $8, $8, 1
        slt  $1, $8, $16
        bne  $1, $0, outer
        or   $4, $10, $0
        addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 1,
    range: (1, 6),
    samples: &[&[1], &[4], &[6]],
    indirect: false,
};

pub const JUMP_TABLE: CorpusProgram = CorpusProgram {
    name: "jump_table",
    about: "a switch dispatched through a jump table (register-indirect jump)",
    source: "
        .data 0x10000000
table:  .word case0, case1, case2
        .text
main:   addi $2, $0, 5
        syscall
        sll  $8, $2, 2
        lui  $9, %hi(table)
        ori  $9, $9, %lo(table)
        add  $9, $9, $8
        lw   $9, 0($9)
        jr   $9
case0:  addi $4, $0, 10
        j    out
case1:  addi $4, $0, 20
        j    out
case2:  addi $4, $0, 30
out:    addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 1,
    range: (0, 2),
    samples: &[&[0], &[1], &[2]],
    indirect: true,
};

pub const ALIAS_PAIR: CorpusProgram = CorpusProgram {
    name: "alias_pair",
    about: "a producer loop and a consumer loop sharing a buffer, plus an unrelated loop",
    source: "
        .data 0x10000000
buf:    .space 64
other:  .word 9, 8, 7, 6, 5, 4, 3, 2
        .text
main:   addi $2, $0, 5
        syscall
        or   $16, $2, $0
        lui  $8, %hi(buf)
        ori  $8, $8, %lo(buf)
        addi $17, $8, 64
        or   $9, $16, $0
fill:   sw   $9, 0($8)
        addi $9, $9, 3
        addi $8, $8, 4
        bne  $8, $17, fill
        lui  $8, %hi(buf)
        ori  $8, $8, %lo(buf)
        addi $10, $0, 0
sum:    lw   $11, 0($8)
        add  $10, $10, $11
        addi $8, $8, 4
        bne  $8, $17, sum
        lui  $8, %hi(other)
        ori  $8, $8, %lo(other)
        addi $18, $8, 32
        addi $12, $0, 0
mix:    lw   $11, 0($8)
        xor  $12, $12, $11
        sll  $12, $12, 1
        addi $8, $8, 4
        bne  $8, $18, mix
        or   $4, $10, $0
        addi $2, $0, 1
        syscall
        or   $4, $12, $0
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 1,
    range: (i32::MIN, i32::MAX),
    samples: &[&[0], &[5], &[0xffff_0000]],
    indirect: false,
};

pub const COUNT_LOOP: CorpusProgram = CorpusProgram {
    name: "count_loop",
    about: "a bottom-tested loop whose body runs ten times",
    source: "
main:   addi $8, $0, 10
        addi $9, $0, 0
body:   add  $9, $9, $8
        addi $8, $8, -1
        bne  $8, $0, body
        or   $4, $9, $0
        addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 0,
    range: (0, 0),
    samples: &[&[]],
    indirect: false,
};

pub const HOT_LOOP: CorpusProgram = CorpusProgram {
    name: "hot_loop",
    about: "one loop that dominates the cycle count next to a short warm-up loop",
    source: "
main:   addi $2, $0, 5
        syscall
        or   $16, $2, $0
        addi $8, $0, 3
        addi $9, $0, 0
warm:   add  $9, $9, $8
        addi $8, $8, -1
        bne  $8, $0, warm
        addi $8, $0, 100
        or   $10, $16, $0
hot:    sll  $11, $10, 1
        add  $10, $10, $11
        srl  $12, $10, 2
        xor  $10, $10, $12
        add  $10, $10, $9
        addi $8, $8, -1
        bne  $8, $0, hot
        or   $4, $10, $0
        addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
",
    arity: 1,
    range: (i32::MIN, i32::MAX),
    samples: &[&[1], &[0xdead_beef], &[0]],
    indirect: false,
};

/// Every bundled program.
pub const ALL: [CorpusProgram; 13] = [
    CONST_PRINT,
    STRAIGHT_LINE,
    UNROLLED_SUM,
    DOT_PRODUCT,
    FIR_FILTER,
    MUL_CONST,
    SPILL_PROC,
    IF_ELSE,
    NESTED_LOOPS,
    JUMP_TABLE,
    ALIAS_PAIR,
    COUNT_LOOP,
    HOT_LOOP,
];

pub fn by_name(name: &str) -> Option<&'static CorpusProgram> {
    ALL.iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;
    use crate::sim::{run, ExitReason};

    #[test]
    fn every_program_assembles_and_halts_on_its_samples() {
        for p in &ALL {
            let img = assemble(p.source).unwrap_or_else(|e| panic!("{}: {e}", p.name));
            for s in p.samples {
                assert_eq!(s.len(), p.arity, "{}", p.name);
                let r = run(&img, s, 1_000_000);
                assert_eq!(r.exit_reason, ExitReason::Halted, "{} {:?}", p.name, s);
            }
        }
    }

    #[test]
    fn dot_product_matches_arithmetic() {
        let va: [i32; 8] = [3, -1, 4, 1, -5, 9, 2, 6];
        let vb: [i32; 8] = [2, 7, -1, 8, 2, 8, -1, 8];
        let img = assemble(DOT_PRODUCT.source).unwrap();
        for n in 0..=8usize {
            let want: i32 = va[..n].iter().zip(&vb[..n]).map(|(a, b)| a * b).sum();
            assert_eq!(run(&img, &[n as u32], 10_000).outputs, [want as u32]);
        }
    }

    #[test]
    fn fir_matches_arithmetic() {
        let h = [1i32, 3, 3, 1];
        let x = [5i32, -2, 7, 0, 4, 4, -3, 8, 1, 2, 9, -6];
        let img = assemble(FIR_FILTER.source).unwrap();
        let bias = -7i32;
        let want: alloc::vec::Vec<u32> =
            (0..9).map(|i| (bias + (0..4).map(|k| h[k] * x[i + k]).sum::<i32>()) as u32).collect();
        assert_eq!(run(&img, &[bias as u32], 10_000).outputs, want);
    }

    #[test]
    fn count_loop_sums_one_to_ten() {
        let img = assemble(COUNT_LOOP.source).unwrap();
        assert_eq!(run(&img, &[], 1000).outputs, [55]);
    }
}

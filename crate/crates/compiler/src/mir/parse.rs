use std::collections::HashMap;

use super::{
    verify, BinOp, Block, BlockId, Builtin, Function, Inst, MemType, MirError, Module, Op, Operand,
    Terminator, Type, Value, ValueData,
};

fn err(line: usize, message: impl Into<String>) -> MirError {
    MirError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses and verifies a module.
pub fn parse_mir(source: &str) -> Result<Module, MirError> {
    let lines: Vec<(usize, &str)> = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split(';').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();

    let mut chunks: Vec<&[(usize, &str)]> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let (line, text) = lines[i];
        if !text.starts_with("func ") {
            return Err(err(line, format!("expected `func`, found `{text}`")));
        }
        let end = lines[i..]
            .iter()
            .position(|(_, l)| *l == "}")
            .map(|p| i + p)
            .ok_or_else(|| err(line, "function is missing its closing `}`"))?;
        chunks.push(&lines[i..=end]);
        i = end + 1;
    }

    let headers = chunks
        .iter()
        .map(|c| parse_header(c[0].0, c[0].1))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sigs: HashMap<String, (Vec<Type>, Option<Type>)> = HashMap::new();
    for h in &headers {
        if Builtin::from_name(&h.name).is_some() {
            return Err(err(h.line, format!("`@{}` is a builtin", h.name)));
        }
        let sig = (h.params.iter().map(|p| p.1).collect(), h.ret);
        if sigs.insert(h.name.clone(), sig).is_some() {
            return Err(err(h.line, format!("duplicate function `@{}`", h.name)));
        }
    }

    let mut module = Module::default();
    for (chunk, header) in chunks.iter().zip(headers) {
        module
            .functions
            .push(parse_function(&chunk[1..chunk.len() - 1], header, &sigs)?);
    }
    verify(&module)?;
    Ok(module)
}

struct Header {
    line: usize,
    name: String,
    params: Vec<(String, Type)>,
    ret: Option<Type>,
    wbr: bool,
}

fn parse_type(line: usize, s: &str) -> Result<Type, MirError> {
    match s.trim() {
        "int" => Ok(Type::Int),
        "cap" => Ok(Type::Cap),
        other => Err(err(line, format!("unknown type `{other}`"))),
    }
}

fn parse_header(line: usize, text: &str) -> Result<Header, MirError> {
    let rest = text["func ".len()..].trim();
    let rest = rest
        .strip_suffix('{')
        .ok_or_else(|| err(line, "function header must end in `{`"))?
        .trim();
    let name_end = rest.find('(').ok_or_else(|| err(line, "expected `(`"))?;
    let name = rest[..name_end]
        .trim()
        .strip_prefix('@')
        .filter(|n| is_ident(n))
        .ok_or_else(|| err(line, "function name must be `@name`"))?
        .to_string();
    let close = rest.find(')').ok_or_else(|| err(line, "expected `)`"))?;
    let mut params = Vec::new();
    for p in rest[name_end + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
    {
        let (pname, ty) = p
            .split_once(':')
            .ok_or_else(|| err(line, format!("parameter `{p}` needs a type")))?;
        let pname = value_name(line, pname.trim())?;
        params.push((pname, parse_type(line, ty)?));
    }
    let mut tail = rest[close + 1..].split_whitespace().peekable();
    let mut ret = None;
    let mut wbr = false;
    while let Some(tok) = tail.next() {
        match tok {
            "->" => {
                let ty = tail
                    .next()
                    .ok_or_else(|| err(line, "expected a return type"))?;
                ret = Some(parse_type(line, ty)?);
            }
            "wbr" => wbr = true,
            other => {
                return Err(err(
                    line,
                    format!("unexpected `{other}` in function header"),
                ))
            }
        }
    }
    Ok(Header {
        line,
        name,
        params,
        ret,
        wbr,
    })
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

fn value_name(line: usize, tok: &str) -> Result<String, MirError> {
    tok.strip_prefix('%')
        .filter(|n| {
            !n.is_empty()
                && n.chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        })
        .map(str::to_string)
        .ok_or_else(|| err(line, format!("expected a value `%name`, found `{tok}`")))
}

fn parse_int(line: usize, tok: &str) -> Result<i64, MirError> {
    let (neg, body) = match tok.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, tok),
    };
    let v = if let Some(hex) = body.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).map(|v| v as i64)
    } else {
        body.parse::<i64>()
    }
    .map_err(|_| err(line, format!("bad integer `{tok}`")))?;
    Ok(if neg { v.wrapping_neg() } else { v })
}

fn parse_size(line: usize, tok: &str) -> Result<u64, MirError> {
    let v = parse_int(line, tok)?;
    u64::try_from(v).map_err(|_| err(line, format!("size `{tok}` is negative")))
}

/// Splits `a, b, c` respecting `[...]` and `(...)` groups.
fn split_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

struct FnParser<'a> {
    values: HashMap<String, Value>,
    blocks: HashMap<String, BlockId>,
    sigs: &'a HashMap<String, (Vec<Type>, Option<Type>)>,
}

impl FnParser<'_> {
    fn value(&self, line: usize, tok: &str) -> Result<Value, MirError> {
        let name = value_name(line, tok)?;
        self.values
            .get(&name)
            .copied()
            .ok_or_else(|| err(line, format!("undefined value `%{name}`")))
    }

    fn operand(&self, line: usize, tok: &str) -> Result<Operand, MirError> {
        if tok.starts_with('%') {
            self.value(line, tok).map(Operand::Value)
        } else {
            parse_int(line, tok).map(Operand::Imm)
        }
    }

    fn block(&self, line: usize, tok: &str) -> Result<BlockId, MirError> {
        self.blocks
            .get(tok.trim())
            .copied()
            .ok_or_else(|| err(line, format!("unknown block `{tok}`")))
    }

    fn arity<'t>(
        &self,
        line: usize,
        args: &'t [String],
        n: usize,
        what: &str,
    ) -> Result<&'t [String], MirError> {
        if args.len() != n {
            return Err(err(
                line,
                format!("`{what}` takes {n} operand(s), found {}", args.len()),
            ));
        }
        Ok(args)
    }

    /// Parses the right-hand side of an instruction. Store widths left
    /// implicit are resolved once value types are known.
    fn op(&self, line: usize, text: &str) -> Result<(Op, bool), MirError> {
        let (head, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        let (mnemonic, suffix) = match head.split_once('.') {
            Some((m, s)) => (m, Some(s)),
            None => (head, None),
        };
        let mut words: Vec<&str> = rest.split_whitespace().collect();
        let mut flag = |f: &str| {
            let found = words.contains(&f);
            words.retain(|w| *w != f);
            found
        };
        let op = match mnemonic {
            "const" => {
                let [tok] = words.as_slice() else {
                    return Err(err(line, "`const` takes one integer"));
                };
                Op::Const(parse_int(line, tok)?)
            }
            "alloca" => {
                let wbr = flag("wbr");
                let escape = flag("!escape");
                let [size] = words.as_slice() else {
                    return Err(err(line, "`alloca` takes a size"));
                };
                Op::Alloca {
                    size: parse_size(line, size)?,
                    wbr,
                    escape,
                }
            }
            "load" => {
                let volatile = flag("volatile");
                let ty = self.mem_type(line, suffix)?.unwrap_or(MemType::I64);
                let [ptr] = words.as_slice() else {
                    return Err(err(line, "`load` takes one pointer"));
                };
                Op::Load {
                    ty,
                    volatile,
                    ptr: self.value(line, ptr)?,
                }
            }
            "store" => {
                let volatile = flag("volatile");
                let refresh = flag("!refresh");
                let ty = self.mem_type(line, suffix)?;
                let args = split_args(&words.join(" "));
                let args = self.arity(line, &args, 2, "store")?;
                let op = Op::Store {
                    ty: ty.unwrap_or(MemType::I64),
                    volatile,
                    value: self.value(line, &args[0])?,
                    ptr: self.value(line, &args[1])?,
                    refresh,
                };
                return Ok((op, ty.is_none()));
            }
            "call" => {
                let open = rest
                    .find('(')
                    .ok_or_else(|| err(line, "expected `(` after callee"))?;
                let close = rest.rfind(')').ok_or_else(|| err(line, "expected `)`"))?;
                let callee = rest[..open]
                    .trim()
                    .strip_prefix('@')
                    .ok_or_else(|| err(line, "callee must be `@name`"))?
                    .to_string();
                if Builtin::from_name(&callee).is_none() && !self.sigs.contains_key(&callee) {
                    return Err(err(line, format!("unknown function `@{callee}`")));
                }
                let args = split_args(&rest[open + 1..close])
                    .iter()
                    .map(|a| self.value(line, a))
                    .collect::<Result<_, _>>()?;
                Op::Call { callee, args }
            }
            "phi" => {
                let mut incoming = Vec::new();
                for arm in split_args(rest) {
                    let inner = arm
                        .strip_prefix('[')
                        .and_then(|a| a.strip_suffix(']'))
                        .ok_or_else(|| {
                            err(line, format!("phi arm `{arm}` must be `[%v, block]`"))
                        })?;
                    let parts = split_args(inner);
                    let parts = self.arity(line, &parts, 2, "phi arm")?;
                    incoming.push((self.value(line, &parts[0])?, self.block(line, &parts[1])?));
                }
                Op::Phi(incoming)
            }
            _ => {
                let args = split_args(rest);
                match mnemonic {
                    "stackcap" => {
                        let a = self.arity(line, &args, 2, "stackcap")?;
                        Op::StackCap {
                            alloca: self.value(line, &a[0])?,
                            size: parse_size(line, &a[1])?,
                        }
                    }
                    "setopbounds" => {
                        let a = self.arity(line, &args, 2, "setopbounds")?;
                        Op::SetOpBounds {
                            cap: self.value(line, &a[0])?,
                            len: parse_size(line, &a[1])?,
                        }
                    }
                    "gep" => {
                        let a = self.arity(line, &args, 2, "gep")?;
                        Op::Gep {
                            base: self.value(line, &a[0])?,
                            offset: self.operand(line, &a[1])?,
                        }
                    }
                    "copy" => Op::Copy(self.value(line, &self.arity(line, &args, 1, "copy")?[0])?),
                    "pin" => Op::Pin(self.value(line, &self.arity(line, &args, 1, "pin")?[0])?),
                    name => {
                        let op = BinOp::ALL
                            .into_iter()
                            .find(|b| b.name() == name)
                            .ok_or_else(|| err(line, format!("unknown instruction `{name}`")))?;
                        let a = self.arity(line, &args, 2, name)?;
                        Op::Bin {
                            op,
                            lhs: self.value(line, &a[0])?,
                            rhs: self.operand(line, &a[1])?,
                        }
                    }
                }
            }
        };
        if suffix.is_some() && !matches!(op, Op::Load { .. }) {
            return Err(err(line, format!("`{mnemonic}` takes no width suffix")));
        }
        Ok((op, false))
    }

    fn mem_type(&self, line: usize, suffix: Option<&str>) -> Result<Option<MemType>, MirError> {
        suffix
            .map(|s| {
                MemType::from_suffix(s).ok_or_else(|| err(line, format!("unknown width `.{s}`")))
            })
            .transpose()
    }

    fn terminator(&self, line: usize, text: &str) -> Result<Option<Terminator>, MirError> {
        let (head, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        let args = split_args(rest);
        Ok(Some(match head {
            "br" => Terminator::Br(self.block(line, &self.arity(line, &args, 1, "br")?[0])?),
            "condbr" => {
                let a = self.arity(line, &args, 3, "condbr")?;
                Terminator::CondBr {
                    cond: self.value(line, &a[0])?,
                    then: self.block(line, &a[1])?,
                    els: self.block(line, &a[2])?,
                }
            }
            "ret" => match args.as_slice() {
                [] => Terminator::Ret(None),
                [v] => Terminator::Ret(Some(self.value(line, v)?)),
                _ => return Err(err(line, "`ret` takes at most one value")),
            },
            _ => return Ok(None),
        }))
    }
}

fn block_label(text: &str) -> Option<&str> {
    let label = text.strip_suffix(':')?;
    let label = label.strip_prefix("block ").unwrap_or(label).trim();
    is_ident(label).then_some(label)
}

fn parse_function(
    body: &[(usize, &str)],
    header: Header,
    sigs: &HashMap<String, (Vec<Type>, Option<Type>)>,
) -> Result<Function, MirError> {
    let mut p = FnParser {
        values: HashMap::new(),
        blocks: HashMap::new(),
        sigs,
    };
    let mut values: Vec<ValueData> = Vec::new();
    let mut define =
        |p: &mut FnParser, line: usize, name: String, ty: Type| -> Result<Value, MirError> {
            if p.values.contains_key(&name) {
                return Err(MirError::Verify {
                    function: header.name.clone(),
                    line,
                    message: format!("`%{name}` is defined more than once"),
                });
            }
            let v = Value(values.len() as u32);
            values.push(ValueData {
                name: name.clone(),
                ty,
            });
            p.values.insert(name, v);
            Ok(v)
        };

    let params = header
        .params
        .iter()
        .map(|(n, t)| define(&mut p, header.line, n.clone(), *t))
        .collect::<Result<Vec<_>, _>>()?;

    // First sweep: names of blocks and results so forward references resolve.
    let mut block_names = Vec::new();
    for &(line, text) in body {
        if let Some(label) = block_label(text) {
            if p.blocks.contains_key(label) {
                return Err(err(line, format!("duplicate block `{label}`")));
            }
            p.blocks
                .insert(label.to_string(), BlockId(block_names.len() as u32));
            block_names.push((label.to_string(), line));
        } else if let Some((lhs, _)) = text.split_once('=') {
            define(&mut p, line, value_name(line, lhs.trim())?, Type::Int)?;
        }
    }

    let mut blocks: Vec<Block> = Vec::new();
    let mut current: Option<(String, usize, Vec<Inst>)> = None;
    let mut pending_widths = Vec::new();
    for &(line, text) in body {
        if let Some(label) = block_label(text) {
            if let Some((name, _, _)) = &current {
                return Err(err(line, format!("block `{name}` has no terminator")));
            }
            current = Some((label.to_string(), line, Vec::new()));
            continue;
        }
        let Some((_, _, insts)) = current.as_mut() else {
            return Err(err(line, "instruction outside of a block"));
        };
        if let Some(term) = p.terminator(line, text)? {
            let (name, bline, insts) = current.take().expect("inside a block");
            blocks.push(Block {
                name,
                insts,
                term,
                line: bline,
                term_line: line,
            });
            continue;
        }
        let (result, rhs) = match text.split_once('=') {
            Some((lhs, rhs)) => (Some(p.values[&value_name(line, lhs.trim())?]), rhs.trim()),
            None => (None, text),
        };
        let (op, implicit_width) = p.op(line, rhs)?;
        if implicit_width {
            pending_widths.push((blocks.len(), insts.len()));
        }
        insts.push(Inst { result, op, line });
    }
    if let Some((name, line, _)) = current {
        return Err(err(line, format!("block `{name}` has no terminator")));
    }
    if blocks.is_empty() {
        return Err(err(header.line, "function has no blocks"));
    }

    let mut func = Function {
        name: header.name,
        params,
        ret: header.ret,
        wbr: header.wbr,
        blocks,
        values,
        line: header.line,
    };
    infer_types(&mut func, sigs);
    for (b, i) in pending_widths {
        if let Op::Store { ty, value, .. } = &mut func.blocks[b].insts[i].op {
            *ty = if func.values[value.index()].ty == Type::Cap {
                MemType::Cap
            } else {
                MemType::I64
            };
        }
    }
    Ok(func)
}

/// Result types follow from the operation. Copies, pins and phis take the
/// type of their operands, which may need several sweeps around loops.
fn infer_types(func: &mut Function, sigs: &HashMap<String, (Vec<Type>, Option<Type>)>) {
    loop {
        let mut changed = false;
        for b in 0..func.blocks.len() {
            for i in 0..func.blocks[b].insts.len() {
                let inst = &func.blocks[b].insts[i];
                let Some(r) = inst.result else { continue };
                let ty = |v: &Value| func.values[v.index()].ty;
                let new = match &inst.op {
                    Op::Const(_) | Op::Bin { .. } => Type::Int,
                    Op::Alloca { .. }
                    | Op::StackCap { .. }
                    | Op::SetOpBounds { .. }
                    | Op::Gep { .. } => Type::Cap,
                    Op::Load { ty, .. } | Op::Store { ty, .. } => ty.value_type(),
                    Op::Copy(v) | Op::Pin(v) => ty(v),
                    Op::Phi(incoming) => {
                        if incoming.iter().any(|(v, _)| ty(v) == Type::Cap) {
                            Type::Cap
                        } else {
                            Type::Int
                        }
                    }
                    Op::Call { callee, .. } => Builtin::from_name(callee)
                        .map(Builtin::ret)
                        .unwrap_or_else(|| sigs.get(callee).and_then(|s| s.1))
                        .unwrap_or(Type::Int),
                };
                if func.values[r.index()].ty != new {
                    func.values[r.index()].ty = new;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

use std::cmp::Ordering;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Int,
    Text,
    Float,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Int => "INT",
            ColumnType::Text => "TEXT",
            ColumnType::Float => "FLOAT",
        })
    }
}

/// A typed scalar. Floats are never NaN once they reach storage.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Text(String),
    Float(f64),
}

impl Value {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::Int(_) => ColumnType::Int,
            Value::Text(_) => ColumnType::Text,
            Value::Float(_) => ColumnType::Float,
        }
    }

    /// SQL comparison; `None` across types or against NaN.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Float(a), Value::Float(b)) => a.partial_cmp(b),
            _ => None,
        }
    }

    /// Literal form as accepted by the parser.
    pub fn to_sql(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
            Value::Float(x) => format!("{x:?}"),
        }
    }
}

/// Rendering used in result sets.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Text(s) => f.write_str(s),
            Value::Float(x) => write!(f, "{x:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// `column op literal`
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub column: String,
    pub op: CmpOp,
    pub value: Value,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.column, self.op.as_str(), self.value.column_type(), self.value.to_sql())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
    pub primary_key: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    All,
    Columns(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statement {
    CreateTable { name: String, columns: Vec<ColumnDef> },
    CreateIndex { name: String, table: String, column: String },
    Insert { table: String, columns: Option<Vec<String>>, values: Vec<Value> },
    Select {
        projection: Projection,
        table: String,
        predicate: Vec<Comparison>,
        order_by: Option<String>,
        limit: Option<u64>,
    },
    Update { table: String, assignments: Vec<(String, Value)>, predicate: Vec<Comparison> },
    Delete { table: String, predicate: Vec<Comparison> },
    Begin,
    Commit,
    Rollback,
}

impl Statement {
    pub fn table(&self) -> Option<&str> {
        match self {
            Statement::CreateTable { name: table, .. }
            | Statement::CreateIndex { table, .. }
            | Statement::Insert { table, .. }
            | Statement::Select { table, .. }
            | Statement::Update { table, .. }
            | Statement::Delete { table, .. } => Some(table),
            _ => None,
        }
    }
}

fn list<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn typed(v: &Value) -> String {
    format!("{} {}", v.column_type(), v.to_sql())
}

/// Compact structural form, used by the parser corpus.
impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::CreateTable { name, columns } => {
                let cols: Vec<String> = columns
                    .iter()
                    .map(|c| format!("{} {}{}", c.name, c.ty, if c.primary_key { " PK" } else { "" }))
                    .collect();
                write!(f, "CreateTable{{{name}, [{}]}}", cols.join(", "))
            }
            Statement::CreateIndex { name, table, column } => write!(f, "CreateIndex{{{name}, {table}({column})}}"),
            Statement::Insert { table, columns, values } => {
                write!(f, "Insert{{{table}, ")?;
                if let Some(c) = columns {
                    write!(f, "cols=[{}], ", c.join(", "))?;
                }
                let vals: Vec<String> = values.iter().map(typed).collect();
                write!(f, "vals=[{}]}}", vals.join(", "))
            }
            Statement::Select { projection, table, predicate, order_by, limit } => {
                let proj = match projection {
                    Projection::All => "*".to_string(),
                    Projection::Columns(c) => c.join(", "),
                };
                write!(f, "Select{{proj=[{proj}], table={table}, pred=[{}]", list(predicate))?;
                if let Some(o) = order_by {
                    write!(f, ", order={o}")?;
                }
                if let Some(l) = limit {
                    write!(f, ", limit={l}")?;
                }
                f.write_str("}")
            }
            Statement::Update { table, assignments, predicate } => {
                let set: Vec<String> = assignments.iter().map(|(c, v)| format!("{c} = {}", typed(v))).collect();
                write!(f, "Update{{{table}, set=[{}], pred=[{}]}}", set.join(", "), list(predicate))
            }
            Statement::Delete { table, predicate } => write!(f, "Delete{{{table}, pred=[{}]}}", list(predicate)),
            Statement::Begin => f.write_str("Begin"),
            Statement::Commit => f.write_str("Commit"),
            Statement::Rollback => f.write_str("Rollback"),
        }
    }
}

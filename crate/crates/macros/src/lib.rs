//! Procedural macros for `domain-cell`: the `#[sandbox]` attribute and
//! `#[derive(Encodable)]`.

use proc_macro::TokenStream;
use proc_macro2::{Span, TokenStream as TokenStream2};
use quote::{format_ident, quote, ToTokens};
use syn::parse::Parser;
use syn::punctuated::Punctuated;
use syn::spanned::Spanned;
use syn::{
    parse_macro_input, Data, DeriveInput, Error, Expr, Fields, FnArg, Ident, ItemFn, MetaNameValue, Pat, ReturnType,
    Token, Type,
};

#[derive(Default)]
struct SandboxArgs {
    sdi: Option<Expr>,
    executor: Option<Ident>,
    serializer: Option<Ident>,
    backend: Option<Ident>,
    persistent: Option<Expr>,
    heap_size: Option<Expr>,
    stack_size: Option<Expr>,
    name: Option<Ident>,
}

fn expr_ident(e: &Expr) -> syn::Result<Ident> {
    match e {
        Expr::Path(p) if p.path.get_ident().is_some() => Ok(p.path.get_ident().cloned().expect("checked")),
        _ => Err(Error::new(e.span(), "expected an identifier")),
    }
}

fn parse_args(attr: TokenStream2) -> syn::Result<SandboxArgs> {
    let mut out = SandboxArgs::default();
    let list = Punctuated::<MetaNameValue, Token![,]>::parse_terminated.parse2(attr)?;
    for nv in list {
        let key = nv.path.get_ident().map(ToString::to_string).unwrap_or_default();
        let v = nv.value;
        match key.as_str() {
            "sdi" => out.sdi = Some(v),
            "executor" => out.executor = Some(expr_ident(&v)?),
            "serializer" => out.serializer = Some(expr_ident(&v)?),
            "backend" => out.backend = Some(expr_ident(&v)?),
            "persistent" => out.persistent = Some(v),
            "heap_size" => out.heap_size = Some(v),
            "stack_size" => out.stack_size = Some(v),
            "name" => out.name = Some(expr_ident(&v)?),
            _ => return Err(Error::new(nv.path.span(), format!("unknown sandbox option `{key}`"))),
        }
    }
    Ok(out)
}

/// How one parameter crosses the boundary.
struct ParamPlan {
    pack_ty: TokenStream2,
    build: TokenStream2,
    glue: TokenStream2,
    write_back: Option<TokenStream2>,
}

fn bridged_inner(ty: &Type) -> bool {
    match ty {
        Type::Slice(_) => true,
        Type::Path(p) => p.path.is_ident("str"),
        _ => false,
    }
}

fn plan_param(i: usize, arg: &Ident, ty: &Type) -> syn::Result<ParamPlan> {
    let idx = syn::Index::from(i);
    let dc = quote!(::domain_cell);
    Ok(match ty {
        Type::Reference(r) if r.mutability.is_none() && bridged_inner(&r.elem) => {
            let inner = &r.elem;
            ParamPlan {
                pack_ty: quote!(<#inner as #dc::layout::Bridge>::Owned),
                build: quote!(#dc::layout::Bridge::bridge(#arg)),
                glue: quote!(<#inner as #dc::layout::Bridge>::unbridge(&__a.#idx)),
                write_back: None,
            }
        }
        Type::Reference(r) if r.mutability.is_none() => {
            let inner = &r.elem;
            ParamPlan {
                pack_ty: quote!(#inner),
                build: quote!(::core::clone::Clone::clone(#arg)),
                glue: quote!(&__a.#idx),
                write_back: None,
            }
        }
        Type::Reference(r) if matches!(*r.elem, Type::Slice(_)) => {
            let inner = &r.elem;
            ParamPlan {
                pack_ty: quote!(#dc::facade::Mut<<#inner as #dc::layout::Bridge>::Owned>),
                build: quote!(#dc::facade::Mut(#dc::layout::Bridge::bridge(&*#arg))),
                glue: quote!(<#inner as #dc::layout::BridgeMut>::unbridge_mut(&mut __a.#idx.0)),
                write_back: Some(quote! {
                    #dc::layout::BridgeMut::write_back(#arg, __args.#idx.0)
                        .expect("sandboxed callee cannot resize a borrowed slice");
                }),
            }
        }
        Type::Reference(r) => {
            if bridged_inner(&r.elem) {
                return Err(Error::new(ty.span(), "`&mut str` parameters are not supported"));
            }
            let inner = &r.elem;
            ParamPlan {
                pack_ty: quote!(#dc::facade::Mut<#inner>),
                build: quote!(#dc::facade::Mut(::core::clone::Clone::clone(&*#arg))),
                glue: quote!(&mut __a.#idx.0),
                write_back: Some(quote!(*#arg = __args.#idx.0;)),
            }
        }
        Type::ImplTrait(_) => return Err(Error::new(ty.span(), "`impl Trait` parameters cannot cross the boundary")),
        _ => ParamPlan {
            pack_ty: quote!(#dc::facade::Val<#ty>),
            build: quote!(#dc::facade::Val::new(#arg)),
            glue: quote!(__a.#idx.take()),
            write_back: None,
        },
    })
}

fn returns_result(ret: &ReturnType) -> bool {
    match ret {
        ReturnType::Type(_, ty) => match &**ty {
            Type::Path(p) => p.path.segments.last().is_some_and(|s| s.ident == "Result"),
            _ => false,
        },
        ReturnType::Default => false,
    }
}

/// Runs the function in an isolation domain.
///
/// The original body becomes `__real_<name>`; `<name>` turns into a wrapper
/// that stages the arguments, runs the body through a static
/// `WrappedFunction` (named `<NAME>_SANDBOX` unless `name = ...` is given)
/// and copies `&mut` parameters back.
///
/// A fault inside the domain unwinds out of the wrapper with a `FaultInfo`
/// payload, or, when the function returns `Result<_, E>` with
/// `E: From<FaultInfo>`, comes back as `Err`.
///
/// Options: `sdi`, `executor`, `serializer`, `backend`, `persistent`,
/// `heap_size`, `stack_size`, `name`.
#[proc_macro_attribute]
pub fn sandbox(attr: TokenStream, item: TokenStream) -> TokenStream {
    let func = parse_macro_input!(item as ItemFn);
    match expand_sandbox(attr.into(), func) {
        Ok(t) => t.into(),
        Err(e) => e.to_compile_error().into(),
    }
}

fn expand_sandbox(attr: TokenStream2, func: ItemFn) -> syn::Result<TokenStream2> {
    let args = parse_args(attr)?;
    let sig = &func.sig;
    if !sig.generics.params.is_empty() || sig.generics.where_clause.is_some() {
        return Err(Error::new(sig.generics.span(), "sandboxed functions cannot be generic"));
    }
    if let Some(a) = &sig.asyncness {
        return Err(Error::new(a.span(), "sandboxed functions cannot be async"));
    }
    let name = &sig.ident;
    let vis = &func.vis;
    let attrs = &func.attrs;
    let real = format_ident!("__real_{}", name);
    let wrapped = args.name.clone().unwrap_or_else(|| format_ident!("{}_SANDBOX", name.to_string().to_uppercase()));

    let mut plans = Vec::new();
    let mut wrapper_inputs = Vec::new();
    for (i, input) in sig.inputs.iter().enumerate() {
        let FnArg::Typed(pt) = input else {
            return Err(Error::new(input.span(), "sandboxed functions cannot take `self`"));
        };
        let arg = match &*pt.pat {
            Pat::Ident(p) => Ident::new(&format!("__arg_{}", p.ident), p.ident.span()),
            _ => format_ident!("__arg{}", i),
        };
        let ty = &pt.ty;
        plans.push(plan_param(i, &arg, ty)?);
        wrapper_inputs.push(quote!(#arg: #ty));
    }

    let ret_ty = match &sig.output {
        ReturnType::Default => quote!(()),
        ReturnType::Type(_, t) => t.to_token_stream(),
    };
    let output = &sig.output;
    let result_like = returns_result(&sig.output);
    let pack_tys: Vec<_> = plans.iter().map(|p| &p.pack_ty).collect();
    let builds: Vec<_> = plans.iter().map(|p| &p.build).collect();
    let glues: Vec<_> = plans.iter().map(|p| &p.glue).collect();
    let write_backs: Vec<_> = plans.iter().filter_map(|p| p.write_back.as_ref()).collect();
    let pack = quote!((#(#pack_tys,)*));

    let dc = quote!(::domain_cell);
    let name_str = name.to_string();
    let sdi = match &args.sdi {
        Some(e) => quote!((#e) as u64),
        None => quote!(#dc::facade::sdi_from_name(::core::concat!(::core::module_path!(), "::", #name_str))),
    };
    let mut spec = quote!(#dc::SandboxSpec::new(#sdi));
    if let Some(e) = &args.executor {
        spec = quote!(#spec.executor(#dc::Executor::#e));
    }
    if let Some(s) = &args.serializer {
        spec = quote!(#spec.serializer(#dc::Serializer::#s));
    }
    if let Some(b) = &args.backend {
        spec = quote!(#spec.backend(#dc::BackendKind::#b));
    }
    if let Some(p) = &args.persistent {
        spec = quote!(#spec.persistent(#p));
    }
    if let Some(h) = &args.heap_size {
        spec = quote!(#spec.heap_size(#h));
    }
    if let Some(s) = &args.stack_size {
        spec = quote!(#spec.stack_size(#s));
    }
    let (kind, call) =
        if result_like { (quote!(ResultLike), quote!(call_result)) } else { (quote!(Plain), quote!(call)) };
    spec = quote!(#spec.returns(#dc::facade::ReturnKind::#kind));

    let mut real_sig = sig.clone();
    real_sig.ident = real.clone();
    let body = &func.block;
    let unused_args = if write_backs.is_empty() { quote!(let _ = &mut __args;) } else { quote!() };

    Ok(quote! {
        #[doc(hidden)]
        #[allow(non_snake_case, clippy::ptr_arg)]
        #vis #real_sig #body

        #[allow(non_upper_case_globals)]
        #vis static #wrapped: #dc::WrappedFunction<#pack, #ret_ty> =
            #dc::WrappedFunction::new(#spec, |__a: &mut #pack| -> #ret_ty {
                #[allow(unused_variables)]
                let __a = __a;
                #real(#(#glues),*)
            });

        #(#attrs)*
        #[allow(clippy::ptr_arg)]
        #vis fn #name(#(#wrapper_inputs),*) #output {
            #[allow(unused_mut)]
            let mut __args: #pack = (#(#builds,)*);
            let __ret = #wrapped.#call(&mut __args);
            #unused_args
            #(#write_backs)*
            __ret
        }
    })
}

/// Implements `Encodable` and `PortableCodec` for a struct or enum whose
/// fields implement both.
#[proc_macro_derive(Encodable)]
pub fn derive_encodable(item: TokenStream) -> TokenStream {
    let input = parse_macro_input!(item as DeriveInput);
    match expand_derive(input) {
        Ok(t) => t.into(),
        Err(e) => e.to_compile_error().into(),
    }
}

struct FieldSet {
    // How fields are named in a pattern, and their types.
    binds: Vec<Ident>,
    names: Vec<TokenStream2>,
    tys: Vec<Type>,
    shape: Shape,
}

#[derive(Clone, Copy)]
enum Shape {
    Named,
    Tuple,
    Unit,
}

fn field_set(fields: &Fields) -> FieldSet {
    let shape = match fields {
        Fields::Named(_) => Shape::Named,
        Fields::Unnamed(_) => Shape::Tuple,
        Fields::Unit => Shape::Unit,
    };
    let mut set = FieldSet { binds: vec![], names: vec![], tys: vec![], shape };
    for (i, f) in fields.iter().enumerate() {
        set.binds.push(format_ident!("__f{}", i));
        set.names.push(match &f.ident {
            Some(id) => quote!(#id),
            None => {
                let idx = syn::Index::from(i);
                quote!(#idx)
            }
        });
        set.tys.push(f.ty.clone());
    }
    set
}

impl FieldSet {
    fn pattern(&self, path: TokenStream2) -> TokenStream2 {
        let (names, binds) = (&self.names, &self.binds);
        match self.shape {
            Shape::Named => quote!(#path { #(#names: #binds),* }),
            Shape::Tuple => quote!(#path ( #(#binds),* )),
            Shape::Unit => path,
        }
    }

    fn construct(&self, path: TokenStream2, each: impl Fn(&Type) -> TokenStream2) -> TokenStream2 {
        let vals: Vec<_> = self.tys.iter().map(each).collect();
        let names = &self.names;
        match self.shape {
            Shape::Named => quote!(#path { #(#names: #vals),* }),
            Shape::Tuple => quote!(#path ( #(#vals),* )),
            Shape::Unit => path,
        }
    }
}

fn expand_derive(input: DeriveInput) -> syn::Result<TokenStream2> {
    let name = &input.ident;
    let name_str = name.to_string();
    let dc = quote!(::domain_cell);
    let layout = quote!(#dc::layout);
    let enc = quote!(#layout::Encodable);
    let port = quote!(#dc::portable::PortableCodec);

    let mut generics = input.generics.clone();
    for p in generics.type_params_mut() {
        p.bounds.push(syn::parse_quote!(#enc));
        p.bounds.push(syn::parse_quote!(#port));
    }
    let (impl_g, ty_g, where_c) = generics.split_for_impl();

    let body = match &input.data {
        Data::Struct(s) => {
            let fs = field_set(&s.fields);
            let pat = fs.pattern(quote!(Self));
            let binds = &fs.binds;
            let tys = &fs.tys;
            let field_names: Vec<String> = match fs.shape {
                Shape::Named => s.fields.iter().map(|f| f.ident.as_ref().expect("named").to_string()).collect(),
                _ => (0..tys.len()).map(|i| i.to_string()).collect(),
            };
            let exhume = fs.construct(quote!(Self), |t| quote!(<#t as #enc>::exhume_from(__r)?));
            let decode = fs.construct(quote!(Self), |t| quote!(<#t as #port>::decode_portable(__r)?));
            quote! {
                impl #impl_g #enc for #name #ty_g #where_c {
                    const MIN_ENCODED: usize = 0 #(+ <#tys as #enc>::MIN_ENCODED)*;

                    fn describe() -> #layout::TypeDesc {
                        #layout::TypeDesc::Record {
                            name: #name_str,
                            fields: ::std::vec![#((#field_names, <#tys as #enc>::describe())),*],
                        }
                    }

                    fn measure(&self) -> usize {
                        let #pat = self;
                        0 #(+ #enc::measure(#binds))*
                    }

                    fn entomb<__S: #layout::ByteSink + ?Sized>(&self, __out: &mut __S) {
                        let #pat = self;
                        #(#enc::entomb(#binds, __out);)*
                    }

                    fn exhume_from(__r: &mut #layout::Reader<'_>) -> ::core::result::Result<Self, #layout::DecodeError> {
                        ::core::result::Result::Ok(#exhume)
                    }
                }

                impl #impl_g #port for #name #ty_g #where_c {
                    fn portable_size(&self) -> usize {
                        let #pat = self;
                        0 #(+ #port::portable_size(#binds))*
                    }

                    fn encode_portable<__S: #layout::ByteSink + ?Sized>(&self, __out: &mut __S) {
                        let #pat = self;
                        #(#port::encode_portable(#binds, __out);)*
                    }

                    fn decode_portable(__r: &mut #layout::Reader<'_>) -> ::core::result::Result<Self, #layout::DecodeError> {
                        ::core::result::Result::Ok(#decode)
                    }
                }
            }
        }
        Data::Enum(e) => {
            if e.variants.is_empty() {
                return Err(Error::new(Span::call_site(), "cannot derive Encodable for an empty enum"));
            }
            let mut measure_arms = vec![];
            let mut entomb_arms = vec![];
            let mut exhume_arms = vec![];
            let mut size_arms = vec![];
            let mut encode_arms = vec![];
            let mut decode_arms = vec![];
            let mut describe = vec![];
            for (i, v) in e.variants.iter().enumerate() {
                let tag = i as u32;
                let vname = &v.ident;
                let vstr = vname.to_string();
                let fs = field_set(&v.fields);
                let pat = fs.pattern(quote!(Self::#vname));
                let binds = &fs.binds;
                let tys = &fs.tys;
                let exhume = fs.construct(quote!(Self::#vname), |t| quote!(<#t as #enc>::exhume_from(__r)?));
                let decode = fs.construct(quote!(Self::#vname), |t| quote!(<#t as #port>::decode_portable(__r)?));
                measure_arms.push(quote!(#pat => 4 #(+ #enc::measure(#binds))*));
                entomb_arms.push(quote!(#pat => { #enc::entomb(&#tag, __out); #(#enc::entomb(#binds, __out);)* }));
                exhume_arms.push(quote!(#tag => #exhume));
                size_arms.push(quote!(#pat => 4 #(+ #port::portable_size(#binds))*));
                encode_arms.push(quote!(#pat => { #port::encode_portable(&#tag, __out); #(#port::encode_portable(#binds, __out);)* }));
                decode_arms.push(quote!(#tag => #decode));
                describe.push(quote!((#vstr, ::std::vec![#(<#tys as #enc>::describe()),*])));
            }
            quote! {
                impl #impl_g #enc for #name #ty_g #where_c {
                    const MIN_ENCODED: usize = 4;

                    fn describe() -> #layout::TypeDesc {
                        #layout::TypeDesc::Enum { name: #name_str, variants: ::std::vec![#(#describe),*] }
                    }

                    #[allow(unused_variables)]
                    fn measure(&self) -> usize {
                        match self { #(#measure_arms,)* }
                    }

                    #[allow(unused_variables)]
                    fn entomb<__S: #layout::ByteSink + ?Sized>(&self, __out: &mut __S) {
                        match self { #(#entomb_arms)* }
                    }

                    fn exhume_from(__r: &mut #layout::Reader<'_>) -> ::core::result::Result<Self, #layout::DecodeError> {
                        ::core::result::Result::Ok(match <u32 as #enc>::exhume_from(__r)? {
                            #(#exhume_arms,)*
                            _ => return ::core::result::Result::Err(#layout::DecodeError::Malformed("enum variant index")),
                        })
                    }
                }

                impl #impl_g #port for #name #ty_g #where_c {
                    #[allow(unused_variables)]
                    fn portable_size(&self) -> usize {
                        match self { #(#size_arms,)* }
                    }

                    #[allow(unused_variables)]
                    fn encode_portable<__S: #layout::ByteSink + ?Sized>(&self, __out: &mut __S) {
                        match self { #(#encode_arms)* }
                    }

                    fn decode_portable(__r: &mut #layout::Reader<'_>) -> ::core::result::Result<Self, #layout::DecodeError> {
                        ::core::result::Result::Ok(match <u32 as #port>::decode_portable(__r)? {
                            #(#decode_arms,)*
                            _ => return ::core::result::Result::Err(#layout::DecodeError::Malformed("enum variant index")),
                        })
                    }
                }
            }
        }
        Data::Union(u) => return Err(Error::new(u.union_token.span(), "unions cannot derive Encodable")),
    };
    Ok(body)
}
